import numpy as np

from psc.geometry import complete_frame, random_frame
from psc.model import MixingMeasure, ModelState, NoiseScales


def random_state(rng, m, k, c=2, T=3, spread=2.0):
    """A valid parameter with atoms spread out and scales of order one."""
    U = random_frame(m, k, rng)
    theta = complete_frame(U) @ rng.standard_normal(m - k) if k < m else np.zeros(m)
    w = rng.dirichlet(np.ones(T))
    mu = spread * rng.standard_normal((T, k))
    nu = rng.dirichlet(np.ones(c), size=T)
    scales = NoiseScales(float(rng.uniform(0.3, 2.0)), rng.uniform(0.3, 2.0, size=k))
    return ModelState(U, theta, scales, MixingMeasure(w, mu, nu))


def dense_log_density(state, x, y=None):
    """Brute-force log sum_j w_j N_m(x; U mu_j + theta, Sigma) [* nu_{j,y}] with Sigma built densely."""
    from scipy.stats import multivariate_normal

    U, s0 = state.U, state.scales.sigma0
    Sigma = U @ np.diag(state.scales.sigma**2 - s0**2) @ U.T + s0**2 * np.eye(state.m)
    terms = []
    for j in range(state.P.truncation):
        lp = multivariate_normal(U @ state.P.mu[j] + state.theta, Sigma).logpdf(x)
        lp += np.log(state.P.weights[j])
        if y is not None:
            lp += np.log(state.P.nu[j, y - 1])
        terms.append(lp)
    return float(np.logaddexp.reduce(terms))
