"""A tour of affine subspaces and the factorized density.

A k-flat in R^m is stored as a frame U (orthonormal columns) and an origin
theta orthogonal to it.  Any point splits into coordinates inside the flat
and residual coordinates off it, and the model density factorizes the same
way, so no m x m matrix is ever inverted.
"""
import numpy as np

from psc import AffineSubspace, assemble_covariance, log_marginal_density_x, project_point, random_frame
from psc.geometry import complete_frame
from psc.model import MixingMeasure, ModelState, NoiseScales

rng = np.random.default_rng(0)
m, k = 5, 2

U = random_frame(m, k, rng)
theta = complete_frame(U) @ rng.standard_normal(m - k)
flat = AffineSubspace.from_frame(U, theta).check()
print(f"a {flat.k}-flat in R^{flat.m}; |R theta| = {np.linalg.norm(flat.R @ flat.theta):.1e}")

x = rng.standard_normal(m)
point, coords = project_point(U, theta, x)
print("inside coordinates:", np.round(coords.projected, 3))
print("residual coordinates:", np.round(coords.residual, 3))
print("squared distances add up:",
      np.isclose(np.sum((x - theta) ** 2), coords.projected @ coords.projected + coords.residual @ coords.residual))

# A two-atom mixture living on the flat, with isotropic noise off it.
state = ModelState(U, theta, NoiseScales(0.4, np.array([1.0, 0.6])),
                   MixingMeasure(np.array([0.3, 0.7]), np.array([[2.0, 0.0], [-1.0, 1.0]]),
                                 np.array([[0.9, 0.1], [0.2, 0.8]])))
fast = log_marginal_density_x(state, x)

Sigma = assemble_covariance(state)
dense = np.logaddexp(*[
    np.log(w) - 0.5 * (m * np.log(2 * np.pi) + np.linalg.slogdet(Sigma)[1]
                       + (x - U @ mu - theta) @ np.linalg.solve(Sigma, x - U @ mu - theta))
    for w, mu in zip(state.P.weights, state.P.mu)
])
print(f"log density: factorized {fast:.12f}, dense {dense:.12f}")
