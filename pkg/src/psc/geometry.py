"""Affine-subspace algebra on orthonormal frames.

A k-dimensional affine subspace S of R^m is stored either as a frame
``U`` (m x k, orthonormal columns) plus an origin ``theta`` with
``U.T @ theta == 0``, or as the pair ``(R, theta)`` with ``R = U U'``.
"""
from dataclasses import dataclass

import numpy as np

FRAME_TOL = 1e-10
DRIFT_TOL = 1e-8


@dataclass(frozen=True)
class SubspaceCoordinates:
    """Isometric coordinates of a point: ``U'x`` and ``V'(x - theta)``."""

    projected: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class AffineSubspace:
    """Projection matrix ``R`` and origin ``theta`` of an affine subspace."""

    R: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or theta.shape != (R.shape[0],):
            raise ValueError(f"incompatible shapes R{R.shape}, theta{theta.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_frame(cls, U, theta=None):
        U = np.asarray(U, dtype=float)
        theta = np.zeros(U.shape[0]) if theta is None else theta
        return cls(frame_to_projection(U), theta)

    @property
    def m(self):
        return self.R.shape[0]

    @property
    def k(self):
        return int(round(np.trace(self.R)))

    def check(self, tol=FRAME_TOL):
        """Raise ``ValueError`` unless R is a symmetric idempotent with R theta = 0."""
        R = self.R
        if np.linalg.norm(R - R.T) > tol:
            raise ValueError("R is not symmetric")
        if np.linalg.norm(R @ R - R) > tol:
            raise ValueError("R is not idempotent")
        if np.linalg.norm(R @ self.theta) > tol:
            raise ValueError("R theta != 0")
        tr = np.trace(R)
        if abs(tr - round(tr)) > 1e-8:
            raise ValueError(f"trace(R) = {tr} is not an integer")
        return self

    def frame(self):
        """An orthonormal frame spanning the range of R (top-k eigenvectors)."""
        w, Q = np.linalg.eigh(self.R)
        return Q[:, ::-1][:, : self.k]


def frame_error(U):
    """Frobenius norm of ``U'U - I``."""
    U = np.asarray(U, dtype=float)
    return float(np.linalg.norm(U.T @ U - np.eye(U.shape[1])))


def is_frame(U, tol=FRAME_TOL):
    U = np.asarray(U)
    return U.ndim == 2 and U.shape[1] <= U.shape[0] and frame_error(U) <= tol


def random_frame(m, k, rng):
    """Haar-distributed point on the Stiefel manifold V_{k,m}.

    Orthonormalizes a Gaussian matrix and fixes column signs with the sign of
    the diagonal of the triangular factor, which makes the law exactly uniform.
    """
    Q, Rf = np.linalg.qr(rng.standard_normal((m, k)))
    return Q * np.where(np.diag(Rf) < 0, -1.0, 1.0)


def frame_to_projection(U):
    U = np.asarray(U, dtype=float)
    return U @ U.T


def _fix_signs(Q):
    # first entry with non-negligible magnitude in each column is made positive
    idx = np.argmax(np.abs(Q) > 1e-12, axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def complete_frame(U):
    """Deterministic orthonormal basis ``V`` of the orthogonal complement of span(U).

    Computed from a complete Householder QR of ``U``; each column of ``V`` is
    signed so that its first non-negligible entry is positive.
    """
    U = np.asarray(U, dtype=float)
    m, k = U.shape
    if k >= m:
        raise ValueError("no complement: frame already spans R^m")
    Q, _ = np.linalg.qr(U, mode="complete")
    return _fix_signs(Q[:, k:])


def polar_retract(M):
    """Nearest orthonormal frame to ``M`` in Frobenius norm (polar factor)."""
    W, _, Zt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    return W @ Zt


def reorthonormalize(U, tol=DRIFT_TOL):
    """Polar-retract ``U`` only if its drift from orthonormality exceeds ``tol``."""
    return polar_retract(U) if frame_error(U) > tol else U


def project_point(U, theta, x):
    """Project ``x`` onto the affine subspace with frame ``U`` and origin ``theta``.

    Returns the projected point ``R x + theta`` in R^m together with its
    coordinates ``U'x`` and the residual coordinates ``V'(x - theta)``.
    Also accepts an :class:`AffineSubspace` in place of ``U``.
    """
    if isinstance(U, AffineSubspace):
        theta = U.theta if theta is None else theta
        U = U.frame()
    U = np.asarray(U, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    m, k = U.shape
    if x.shape != (m,) or theta.shape != (m,):
        raise ValueError(f"dimension mismatch: frame is {m}x{k}, x{x.shape}, theta{theta.shape}")
    coords = U.T @ x
    point = U @ coords + theta
    residual = complete_frame(U).T @ (x - theta) if k < m else np.zeros(0)
    return point, SubspaceCoordinates(coords, residual)


def cayley(A):
    """Cayley transform ``(I - A/2)^{-1} (I + A/2)`` of a skew-symmetric matrix."""
    I = np.eye(A.shape[0])
    return np.linalg.solve(I - 0.5 * A, I + 0.5 * A)


def random_skew(m, rng):
    G = rng.standard_normal((m, m))
    return np.triu(G, 1) - np.triu(G, 1).T
