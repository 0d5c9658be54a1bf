"""Joint density model for predictors X in R^m and labels Y in {1..c}.

The projection ``U'X`` follows a location mixture of k-variate Gaussian
kernels paired with multinomial kernels on the label; the residual
``V'(X - theta)`` is independent isotropic Gaussian noise.  All densities
are evaluated in factorized form,

    N_m(x; U mu + theta, Sigma) = N_k(U'x; mu, Sigma_1) * N_{m-k}(V'(x - theta); 0, sigma0^2 I),

so no m x m covariance is ever built or inverted.  Labels are 1-based
throughout the public interface.
"""
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry import FRAME_TOL, complete_frame, frame_error

LOG_2PI = np.log(2 * np.pi)


class Atom(NamedTuple):
    mu: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class MixingMeasure:
    """Truncated stick-breaking representation of a discrete mixing measure.

    ``weights`` has shape (T,), ``mu`` (T, k) and ``nu`` (T, c); row j of
    ``mu``/``nu`` is the atom carrying weight ``weights[j]``.
    """

    weights: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def truncation(self):
        return len(self.weights)

    @property
    def atoms(self):
        return [Atom(m, n) for m, n in zip(self.mu, self.nu)]

    def check(self):
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights are not a probability vector")
        if np.any(self.nu < 0) or np.any(np.abs(self.nu.sum(axis=1) - 1) > 1e-12):
            raise ValueError("atom class probabilities are not on the simplex")
        if self.mu.shape[0] != len(w) or self.nu.shape[0] != len(w):
            raise ValueError("atom count does not match weight count")


@dataclass(frozen=True)
class NoiseScales:
    """Residual scale ``sigma0`` and per-direction kernel scales ``sigma`` (std devs)."""

    sigma0: float
    sigma: np.ndarray

    def check(self):
        if not (self.sigma0 > 0 and np.all(self.sigma > 0)):
            raise ValueError("noise scales must be strictly positive")


@dataclass(frozen=True)
class ModelState:
    """One value of the full parameter (k, U, theta, scales, P)."""

    U: np.ndarray
    theta: np.ndarray
    scales: NoiseScales
    P: MixingMeasure

    @property
    def k(self):
        return self.U.shape[1]

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def c(self):
        return self.P.nu.shape[1]

    @property
    def eta(self):
        """Coordinates of ``theta`` in the deterministic complement basis."""
        if self.k == self.m:
            return np.zeros(0)
        return complete_frame(self.U).T @ self.theta

    def replace(self, **changes):
        return replace(self, **changes)

    def check(self, tol=FRAME_TOL):
        """Raise ``ValueError`` if any parameter constraint is violated."""
        if frame_error(self.U) > tol:
            raise ValueError("U is not orthonormal")
        if np.linalg.norm(self.U.T @ self.theta) > tol:
            raise ValueError("theta is not orthogonal to U")
        if self.P.mu.shape[1] != self.k or len(self.scales.sigma) != self.k:
            raise ValueError("atom or scale dimension does not match k")
        self.scales.check()
        self.P.check()
        return self


@dataclass(frozen=True)
class Standardization:
    """Per-feature affine transform ``(x - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def invert(self, Z):
        return np.asarray(Z, dtype=float) * self.scale + self.center

    def to_dict(self):
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["center"], dtype=float), np.asarray(d["scale"], dtype=float))

    def __eq__(self, other):
        return (
            isinstance(other, Standardization)
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.scale, other.scale)
        )


@dataclass(frozen=True)
class LabeledDataset:
    """Predictors ``X`` (n x m) with labels ``y`` in {1..c}."""

    X: np.ndarray
    y: np.ndarray
    c: int
    feature_names: tuple = ()
    standardization: Standardization = None
    indices: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"X{X.shape} and y{y.shape} are inconsistent")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if y.size and (y.min() < 1 or y.max() > self.c):
            raise ValueError(f"labels must lie in 1..{self.c}")
        names = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match X")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(X.shape[0]))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx], indices=self.indices[idx])


def assemble_covariance(state):
    """Dense m x m covariance ``U (Sigma_1 - sigma0^2 I) U' + sigma0^2 I``."""
    s0sq = state.scales.sigma0**2
    U = state.U
    return (U * (state.scales.sigma**2 - s0sq)) @ U.T + s0sq * np.eye(state.m)


def _as_rows(x, m):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != m:
        raise ValueError(f"expected {m} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite predictor values")
    return x, single


def kernel_logpdf(coords, mu, sigma):
    """Log N_k(coords_i; mu_j, diag(sigma^2)) for all pairs, shape (n, T)."""
    k = mu.shape[1]
    const = -0.5 * k * LOG_2PI - np.sum(np.log(sigma))
    a = coords / sigma
    b = mu / sigma
    d2 = np.einsum("ij,ij->i", a, a)[:, None] - 2.0 * (a @ b.T) + np.einsum("ij,ij->i", b, b)
    return const - 0.5 * np.maximum(d2, 0.0)


def logsumexp_rows(a):
    """Row-wise log-sum-exp that tolerates rows of -inf."""
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe[:, None]).sum(axis=1)) + safe


def residual_sq(X, U, theta, coords=None):
    """Squared norm of the residual coordinates ``V'(x - theta)`` per row."""
    if coords is None:
        coords = X @ U
    d = X - theta
    return np.maximum(np.einsum("ij,ij->i", d, d) - np.einsum("ij,ij->i", coords, coords), 0.0)


def residual_logpdf(rsq, sigma0, dim):
    if dim == 0:
        return np.zeros_like(rsq)
    return -0.5 * dim * (LOG_2PI + 2 * np.log(sigma0)) - 0.5 * rsq / sigma0**2


def _parts(state, X):
    coords = X @ state.U
    with np.errstate(divide="ignore"):
        logw = np.log(state.P.weights)
    lk = kernel_logpdf(coords, state.P.mu, state.scales.sigma) + logw
    rsq = residual_sq(X, state.U, state.theta, coords)
    lr = residual_logpdf(rsq, state.scales.sigma0, state.m - state.k)
    return lk, lr


def log_marginal_density_x(state, x):
    """Log of the marginal density of the predictors, one value per row of ``x``."""
    X, single = _as_rows(x, state.m)
    lk, lr = _parts(state, X)
    out = logsumexp_rows(lk) + lr
    return out[0] if single else out


def conditional_class_prob(state, x):
    """Class probabilities ``P(Y = y | X = x)`` as an (n, c) array (or a c-vector).

    The mixing responsibilities depend on ``x`` only through ``U'x``.  Rows
    whose kernel densities all underflow fall back to the atom weights.
    """
    X, single = _as_rows(x, state.m)
    coords = X @ state.U
    with np.errstate(divide="ignore"):
        lk = kernel_logpdf(coords, state.P.mu, state.scales.sigma) + np.log(state.P.weights)
    top = lk.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    resp = np.exp(lk - np.where(np.isfinite(top), top, 0.0))
    resp[dead] = state.P.weights
    resp /= resp.sum(axis=1, keepdims=True)
    p = resp @ state.P.nu
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def joint_log_density(state, x, y):
    """Log joint density of (x, y); ``y`` is a label or array of labels in {1..c}."""
    X, single = _as_rows(x, state.m)
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (X.shape[0],):
        raise ValueError("one label per row required")
    if np.any((y < 1) | (y > state.c)) or not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError(f"labels must be integers in 1..{state.c}")
    y = y.astype(int)
    lk, lr = _parts(state, X)
    with np.errstate(divide="ignore"):
        lnu = np.log(state.P.nu[:, y - 1].T)
    out = logsumexp_rows(lk + lnu) + lr
    return out[0] if single else out
