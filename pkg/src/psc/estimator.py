"""Bayes point estimate of the affine subspace and feature-importance scores.

Under the loss ``||R1 - R2||_F^2 + ||theta1 - theta2||^2`` on pairs
(projection, origin), the posterior risk of a rank-k candidate R equals
``k - tr(R M) - ||theta_bar||^2`` with ``M = 2 R_bar - theta_bar theta_bar'``
once theta is set to ``(I - R) theta_bar``.  The minimizer keeps the top
eigenvectors of M, and k minimizes ``k - sum_{j<=k} lambda_j``.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .geometry import AffineSubspace


@dataclass(frozen=True)
class SubspaceEstimate:
    R_hat: np.ndarray
    theta_hat: np.ndarray
    k_hat: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    objective: np.ndarray
    unique: bool

    @property
    def frame(self):
        """Orthonormal loadings (m x k_hat): the leading eigenvectors."""
        return self.eigenvectors[:, : self.k_hat]

    @property
    def subspace(self):
        return AffineSubspace(self.R_hat, self.theta_hat)


@dataclass(frozen=True)
class FeatureImportance:
    names: tuple
    scores: np.ndarray
    norms: np.ndarray
    loadings: np.ndarray

    def ranking(self):
        """Feature indices sorted by decreasing score (stable on ties)."""
        return np.argsort(-self.scores, kind="stable")

    def rows(self):
        for i in self.ranking():
            yield self.names[i], self.loadings[i], self.norms[i], self.scores[i]


def posterior_means(chain):
    """Posterior means of the projection matrix ``U U'`` and of ``theta``."""
    draws = getattr(chain, "draws", chain)
    if len(draws) == 0:
        raise ValueError("empty chain")
    ms = {d.m for d in draws}
    ks = {d.k for d in draws}
    if len(ms) != 1 or len(ks) != 1:
        raise ValueError("draws disagree on dimensions; chains with different m or k cannot be merged")
    R_bar = np.mean([d.U @ d.U.T for d in draws], axis=0)
    theta_bar = np.mean([d.theta for d in draws], axis=0)
    return 0.5 * (R_bar + R_bar.T), theta_bar


def estimate_subspace(R_bar, theta_bar, tol=1e-10):
    """Minimize posterior expected loss over all (projection, origin) pairs.

    ``k = 0`` is admitted.  Ties among minimizing k are resolved toward the
    smallest k; ``unique`` is False when the minimizing k is not unique or
    the k-th and (k+1)-th eigenvalues coincide (within ``tol``).
    """
    R_bar = np.asarray(R_bar, dtype=float)
    theta_bar = np.asarray(theta_bar, dtype=float)
    if np.linalg.norm(R_bar - R_bar.T) > 1e-8:
        raise ValueError("R_bar must be symmetric")
    m = len(theta_bar)
    M = 2.0 * R_bar - np.outer(theta_bar, theta_bar)
    lam, vecs = np.linalg.eigh(0.5 * (M + M.T))
    lam, vecs = lam[::-1], vecs[:, ::-1]
    objective = np.arange(m + 1) - np.concatenate(([0.0], np.cumsum(lam)))
    best = objective.min()
    minimizers = np.flatnonzero(objective <= best + tol)
    k_hat = int(minimizers[0])
    unique = len(minimizers) == 1
    if 0 < k_hat < m and lam[k_hat - 1] - lam[k_hat] <= tol:
        unique = False
    U = vecs[:, :k_hat]
    R_hat = U @ U.T
    theta_hat = theta_bar - R_hat @ theta_bar
    return SubspaceEstimate(R_hat, theta_hat, k_hat, lam, vecs, objective, unique)


def estimate_from_chain(chain):
    return estimate_subspace(*posterior_means(chain))


def expected_loss(R, theta, draws):
    """Average loss of the candidate (R, theta) against (R_d, theta_d) pairs."""
    return float(np.mean([loss((R, theta), d) for d in draws]))


def loss(pair1, pair2):
    """Squared Frobenius distance of projections plus squared origin distance."""
    R1, t1 = _pair(pair1)
    R2, t2 = _pair(pair2)
    if R1.shape != R2.shape or t1.shape != t2.shape:
        raise ValueError("subspaces live in different ambient dimensions")
    return float(np.sum((R1 - R2) ** 2) + np.sum((t1 - t2) ** 2))


def _pair(p):
    if isinstance(p, AffineSubspace):
        return p.R, p.theta
    R, theta = p
    return np.asarray(R, dtype=float), np.asarray(theta, dtype=float)


def feature_importance(est, names=None):
    """Per-feature scores ``diag(R_hat)`` and loading row norms (score = norm^2)."""
    m = est.R_hat.shape[0]
    names = tuple(names) if names is not None else tuple(f"x{i + 1}" for i in range(m))
    if len(names) != m:
        raise ValueError("one name per feature required")
    loadings = est.frame
    norms = np.linalg.norm(loadings, axis=1)
    return FeatureImportance(names, np.diag(est.R_hat).copy(), norms, loadings)


def format_table(imp, digits=3):
    """Plain-text table: feature, one column per loading, norm, score."""
    k = imp.loadings.shape[1]
    head = ["Variable"] + [f"U[,{j + 1}]" for j in range(k)] + ["norm", "score"]
    body = [
        [imp.names[i]] + [f"{v:.{digits}f}" for v in imp.loadings[i]]
        + [f"{imp.norms[i]:.{digits}f}", f"{imp.scores[i]:.{digits}f}"]
        for i in range(len(imp.names))
    ]
    widths = [max(len(r[j]) for r in [head] + body) for j in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule] + [fmt(r) for r in body]) + "\n"


def write_importance_csv(imp, path):
    k = imp.loadings.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature"] + [f"loading_{j + 1}" for j in range(k)] + ["norm", "score"])
        for i in range(len(imp.names)):
            w.writerow([imp.names[i]] + [repr(float(v)) for v in imp.loadings[i]]
                       + [repr(float(imp.norms[i])), repr(float(imp.scores[i]))])


def write_subspace_csv(est, path):
    """One row per ambient coordinate: R_hat row, theta_hat entry; then eigenvalues."""
    m = len(est.theta_hat)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"R_{j + 1}" for j in range(m)] + ["theta", "eigenvalue"])
        for i in range(m):
            w.writerow([i + 1] + [repr(float(v)) for v in est.R_hat[i]]
                       + [repr(float(est.theta_hat[i])), repr(float(est.eigenvalues[i]))])
