"""Conjugate prior menu for the model parameters, with densities and samplers.

Given k the blocks (U, theta), the noise scales and the mixing measure P are
a priori independent:

* U: matrix Bingham-von Mises-Fisher, ``exp tr(U A + U B U' C)`` with
  A (k x m), B (k x k), C (m x m); all-zero parameters give the uniform law.
* theta: isotropic N(0, theta_scale^2 I) restricted to the complement of span(U).
* sigma0^2, sigma_l^2: inverse-Gamma.
* P: truncated stick-breaking DP(w0 (N_k(m0, tau^2 I) x Dirichlet(alpha))).
"""
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import betaln, gammaln, xlogy

from .geometry import cayley, complete_frame, random_frame, random_skew
from .model import LOG_2PI, MixingMeasure, ModelState, NoiseScales


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.  Defaults are weakly informative for standardized data."""

    w0: float = 1.0
    base_mean: float = 0.0
    base_scale: float = 3.0
    base_alpha: tuple = None
    sigma_shape: float = 2.0
    sigma_rate: float = 1.0
    sigma0_shape: float = 2.0
    sigma0_rate: float = 1.0
    theta_scale: float = 10.0
    bmf_A: np.ndarray = None
    bmf_B: np.ndarray = None
    bmf_C: np.ndarray = None
    k_grid: tuple = None

    def __post_init__(self):
        for name in ("w0", "base_scale", "sigma_shape", "sigma_rate",
                     "sigma0_shape", "sigma0_rate", "theta_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.base_alpha is not None:
            alpha = tuple(float(a) for a in self.base_alpha)
            if any(a <= 0 for a in alpha):
                raise ValueError("base_alpha entries must be positive")
            object.__setattr__(self, "base_alpha", alpha)
        for name in ("bmf_A", "bmf_B", "bmf_C"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))

    def alpha(self, c):
        if self.base_alpha is None:
            return np.ones(c)
        if len(self.base_alpha) != c:
            raise ValueError(f"base_alpha has {len(self.base_alpha)} entries, expected {c}")
        return np.asarray(self.base_alpha)

    @property
    def uniform_frame(self):
        return all(
            v is None or not np.any(v) for v in (self.bmf_A, self.bmf_B, self.bmf_C)
        )

    def to_dict(self):
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, np.ndarray):
                d[key] = val.tolist()
            elif isinstance(val, tuple):
                d[key] = list(val)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior settings: {sorted(unknown)}")
        d = dict(d)
        for key in ("base_alpha", "k_grid"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def log_bmf_density_unnormalized(U, cfg):
    """``tr(U A) + tr(U B U' C)``; zero when the parameters are absent."""
    U = np.asarray(U, dtype=float)
    m, k = U.shape
    out = 0.0
    A, B, C = cfg.bmf_A, cfg.bmf_B, cfg.bmf_C
    if A is not None:
        if A.shape != (k, m):
            raise ValueError(f"bmf_A must be {k}x{m}, got {A.shape}")
        out += np.sum(U * A.T)
    if B is not None or C is not None:
        B = np.zeros((k, k)) if B is None else B
        C = np.zeros((m, m)) if C is None else C
        if B.shape != (k, k) or C.shape != (m, m):
            raise ValueError(f"bmf_B must be {k}x{k} and bmf_C {m}x{m}")
        out += np.trace(U @ B @ U.T @ C)
    return float(out)


def stick_breaking(v):
    """Weights from stick fractions; the last fraction is forced to 1."""
    v = np.array(v, dtype=float)
    v[-1] = 1.0
    rest = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    w = v * rest
    w[-1] = max(1.0 - w[:-1].sum(), 0.0)
    return w / w.sum()


def stick_fractions(w):
    rest = 1.0 - np.concatenate(([0.0], np.cumsum(w[:-1])))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(rest > 0, w / rest, 1.0)
    return np.clip(v, 0.0, 1.0)


def sample_atoms(cfg, T, k, c, rng):
    mu = cfg.base_mean + cfg.base_scale * rng.standard_normal((T, k))
    nu = rng.dirichlet(cfg.alpha(c), size=T)
    return mu, nu


def sample_inv_gamma(shape, rate, rng, size=None):
    return rate / rng.gamma(shape, 1.0, size=size)


def _sample_bmf(cfg, m, k, rng, steps=500, step=0.3):
    # random-walk Metropolis with rotation moves; the BMF normalizer is never needed
    U = random_frame(m, k, rng)
    cur = log_bmf_density_unnormalized(U, cfg)
    for _ in range(steps):
        prop = cayley(step * random_skew(m, rng)) @ U
        new = log_bmf_density_unnormalized(prop, cfg)
        if np.log(rng.uniform()) < new - cur:
            U, cur = prop, new
    return U


def sample_prior(cfg, k, m, c, rng, truncation=20):
    """Draw a full :class:`ModelState` from the prior.

    With non-zero BMF parameters U is drawn by a short Metropolis run, so the
    draw is approximate; the uniform default is exact.
    """
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    U = random_frame(m, k, rng) if cfg.uniform_frame else _sample_bmf(cfg, m, k, rng)
    if k < m:
        eta = cfg.theta_scale * rng.standard_normal(m - k)
        theta = complete_frame(U) @ eta
        theta -= U @ (U.T @ theta)
    else:
        theta = np.zeros(m)
    sigma = np.sqrt(sample_inv_gamma(cfg.sigma_shape, cfg.sigma_rate, rng, size=k))
    sigma0 = float(np.sqrt(sample_inv_gamma(cfg.sigma0_shape, cfg.sigma0_rate, rng)))
    w = stick_breaking(rng.beta(1.0, cfg.w0, size=truncation))
    mu, nu = sample_atoms(cfg, truncation, k, c, rng)
    return ModelState(U, theta, NoiseScales(sigma0, sigma), MixingMeasure(w, mu, nu))


def log_inv_gamma(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x


def log_dirichlet(nu, alpha):
    return gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum(xlogy(alpha - 1, nu), axis=-1)


def log_prior_blocks(state, cfg):
    """Prior log density split by independent block (densities on sigma^2 scale)."""
    k, m, c = state.k, state.m, state.c
    v = np.clip(stick_fractions(state.P.weights)[:-1], 1e-300, 1 - 1e-16)
    sticks = np.sum((cfg.w0 - 1) * np.log1p(-v)) - len(v) * betaln(1.0, cfg.w0)
    z = (state.P.mu - cfg.base_mean) / cfg.base_scale
    mu = np.sum(-0.5 * k * LOG_2PI - k * np.log(cfg.base_scale) - 0.5 * np.sum(z**2, axis=1))
    nu = np.sum(log_dirichlet(state.P.nu, cfg.alpha(c)))
    scales = np.sum(log_inv_gamma(state.scales.sigma**2, cfg.sigma_shape, cfg.sigma_rate))
    if k < m:
        scales += log_inv_gamma(state.scales.sigma0**2, cfg.sigma0_shape, cfg.sigma0_rate)
    d = m - k
    theta = -0.5 * d * (LOG_2PI + 2 * np.log(cfg.theta_scale)) - 0.5 * (
        state.theta @ state.theta
    ) / cfg.theta_scale**2
    return {
        "frame": log_bmf_density_unnormalized(state.U, cfg),
        "theta": float(theta),
        "scales": float(scales),
        "sticks": float(sticks),
        "atoms": float(mu + nu),
    }


def log_prior(state, cfg):
    """Sum of block log densities; the BMF term is unnormalized."""
    return sum(log_prior_blocks(state, cfg).values())
