"""Sampler correctness checks by joint-distribution comparison.

Two samplers target the same joint law of (parameters, data):

* marginal-conditional: draw parameters from the prior, then data given
  parameters (independent draws);
* successive-conditional: alternate one Gibbs sweep (parameters given data)
  with a fresh draw of data given parameters.

If every conditional update is correct, any statistic has the same mean
under both.  Means are compared with z-scores; the dependent chain uses
batch-means standard errors.
"""
from dataclasses import dataclass

import numpy as np

from .data import sample_observations
from .gibbs import gibbs_sweep
from .priors import PriorConfig, sample_prior


def _stats(state, X, y):
    return {
        "theta_mean": float(state.theta.mean()),
        "log_sigma0_sq": float(np.log(state.scales.sigma0**2)),
        "w1": float(state.P.weights[0]),
        "log_sigma1_sq": float(np.log(state.scales.sigma[0] ** 2)),
        "R11": float(state.U[0] @ state.U[0]),
        "mu11": float(state.P.mu[0, 0]),
        "nu11": float(state.P.nu[0, 0]),
        "frac_y1": float(np.mean(y == 1)),
        "x_mean": float(X.mean()),
    }


STATISTICS = (
    "theta_mean", "log_sigma0_sq", "w1", "log_sigma1_sq", "R11", "mu11", "nu11", "frac_y1", "x_mean",
)


@dataclass(frozen=True)
class GewekeResult:
    names: tuple
    marginal_mean: np.ndarray
    marginal_se: np.ndarray
    successive_mean: np.ndarray
    successive_se: np.ndarray

    @property
    def z(self):
        return (self.marginal_mean - self.successive_mean) / np.hypot(self.marginal_se, self.successive_se)

    def passed(self, bound=3.0):
        return bool(np.all(np.abs(self.z) <= bound))

    def table(self):
        rows = [f"{'statistic':<15}{'marginal':>11}{'successive':>12}{'z':>8}"]
        for i, name in enumerate(self.names):
            rows.append(f"{name:<15}{self.marginal_mean[i]:>11.4f}{self.successive_mean[i]:>12.4f}"
                        f"{self.z[i]:>8.2f}")
        return "\n".join(rows)


def batch_means_se(x, n_batches=50):
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    b = len(x) // n_batches
    if b < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def marginal_conditional(cfg, k, m, c, n, T, draws, rng):
    out = np.empty((draws, len(STATISTICS)))
    for i in range(draws):
        state = sample_prior(cfg, k, m, c, rng, truncation=T)
        X, y, _ = sample_observations(state, n, rng)
        out[i] = list(_stats(state, X, y).values())
    return out


def successive_conditional(cfg, k, m, c, n, T, iterations, rng, step=0.3, frame_move="hmc",
                           n_leapfrog=5, frame_steps=1):
    state = sample_prior(cfg, k, m, c, rng, truncation=T)
    X, y, _ = sample_observations(state, n, rng)
    out = np.empty((iterations, len(STATISTICS)))
    for i in range(iterations):
        state, _, _, _ = gibbs_sweep(state, X, y, cfg, step, rng, frame_steps, frame_move, n_leapfrog)
        X, y, _ = sample_observations(state, n, rng)
        out[i] = list(_stats(state, X, y).values())
    return out


def geweke_test(cfg=None, k=1, m=3, c=2, n=20, T=5, draws=20000, iterations=20000, seed=0,
                n_batches=50, **sweep_kw):
    """Run both samplers and compare the means of every monitored statistic."""
    cfg = cfg or PriorConfig()
    rng = np.random.default_rng(seed)
    a = marginal_conditional(cfg, k, m, c, n, T, draws, rng)
    b = successive_conditional(cfg, k, m, c, n, T, iterations, rng, **sweep_kw)
    return GewekeResult(
        STATISTICS,
        a.mean(axis=0),
        a.std(axis=0, ddof=1) / np.sqrt(len(a)),
        b.mean(axis=0),
        np.array([batch_means_se(b[:, j], n_batches) for j in range(b.shape[1])]),
    )
