"""Comparison classifiers: k-nearest neighbours and a per-class Gaussian mixture.

Both are tuned by sweeping a grid on the supplied test split, which mirrors
the comparison protocol used for the principal subspace classifier.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class KnnConfig:
    grid: tuple = tuple(range(1, 26))

    def __post_init__(self):
        if not self.grid or any(int(g) < 1 for g in self.grid):
            raise ValueError("neighbour grid must be nonempty and positive")


def _sq_distances(A, B):
    d = np.einsum("ij,ij->i", A, A)[:, None] - 2.0 * A @ B.T + np.einsum("ij,ij->i", B, B)
    return np.maximum(d, 0.0)


def knn_predict(train, X_new, k_neighbors):
    """Majority vote among the ``k_neighbors`` nearest training rows.

    Distance ties keep training order; vote ties go to the smallest label.
    """
    if train.n == 0:
        raise ValueError("empty training set")
    if not 1 <= k_neighbors <= train.n:
        raise ValueError(f"k_neighbors must lie in 1..{train.n}")
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    order = np.argsort(_sq_distances(X_new, train.X), axis=1, kind="stable")[:, :k_neighbors]
    votes = np.zeros((len(X_new), train.c), dtype=int)
    np.add.at(votes, (np.repeat(np.arange(len(X_new)), k_neighbors), train.y[order].ravel() - 1), 1)
    return votes.argmax(axis=1) + 1


def knn_sweep(train, test, cfg=None):
    """Evaluate every grid value on ``test``; returns (best_k, error, {k: error})."""
    cfg = cfg or KnnConfig()
    grid = sorted({int(g) for g in cfg.grid if g <= train.n})
    if not grid:
        raise ValueError("no grid value fits the training size")
    errors = {g: float(np.mean(knn_predict(train, test.X, g) != test.y)) for g in grid}
    best = min(grid, key=lambda g: (errors[g], g))
    return best, errors[best], errors


@dataclass
class DiagonalGMM:
    """Diagonal-covariance Gaussian mixture fitted by EM."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list = field(default_factory=list)

    def component_logpdf(self, X):
        v = self.variances
        d = (X[:, None, :] - self.means[None]) ** 2 / v[None]
        return -0.5 * (d.sum(axis=2) + np.log(2 * np.pi * v).sum(axis=1)) + np.log(self.weights)

    def logpdf(self, X):
        return logsumexp(self.component_logpdf(X), axis=1)


def fit_gmm(X, n_components, rng, max_iter=200, tol=1e-8):
    """EM from a random-row initialisation; variances are floored at ``VAR_FLOOR``."""
    n, m = X.shape
    g = min(n_components, n)
    means = X[rng.choice(n, size=g, replace=False)].copy()
    var = np.maximum(X.var(axis=0), VAR_FLOOR)
    model = DiagonalGMM(np.full(g, 1.0 / g), means, np.tile(var, (g, 1)))
    prev = -np.inf
    for _ in range(max_iter):
        lp = model.component_logpdf(X)
        ll = logsumexp(lp, axis=1)
        total = float(ll.sum())
        model.loglik_history.append(total)
        if total - prev < tol * max(1.0, abs(total)):
            break
        prev = total
        resp = np.exp(lp - ll[:, None])
        nk = resp.sum(axis=0) + 1e-300
        model.weights = nk / n
        model.means = (resp.T @ X) / nk[:, None]
        sq = (resp.T @ X**2) / nk[:, None] - model.means**2
        model.variances = np.maximum(sq, VAR_FLOOR)
    return model


def gmm_discriminant_predict(train, X_new, n_components, seed=0):
    rng = np.random.default_rng(seed)
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    scores = np.full((len(X_new), train.c), -np.inf)
    for cls in range(1, train.c + 1):
        Xc = train.X[train.y == cls]
        if len(Xc) == 0:
            continue
        model = fit_gmm(Xc, n_components, rng)
        scores[:, cls - 1] = model.logpdf(X_new) + np.log(len(Xc) / train.n)
    return scores.argmax(axis=1) + 1


def gmm_discriminant_fit_predict(train, test, grid=(1, 2, 3, 4, 5), seed=0):
    """Sweep the per-class component count; returns (best, error, {g: error})."""

    def run(g):
        return float(np.mean(gmm_discriminant_predict(train, test.X, g, seed) != test.y))

    grid = sorted({int(g) for g in grid})
    with ThreadPoolExecutor() as pool:
        errors = dict(zip(grid, pool.map(run, grid)))
    best = min(grid, key=lambda g: (errors[g], g))
    return best, errors[best], errors
