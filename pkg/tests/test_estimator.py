import numpy as np
import pytest
from helpers import random_state
from hypothesis import given
from hypothesis import strategies as st

from psc.estimator import (
    estimate_subspace,
    expected_loss,
    feature_importance,
    format_table,
    loss,
    posterior_means,
    write_importance_csv,
    write_subspace_csv,
)
from psc.geometry import AffineSubspace, complete_frame, random_frame


def test_single_draw_means(rng):
    s = random_state(rng, 4, 2)
    R, t = posterior_means([s])
    np.testing.assert_allclose(R, s.U @ s.U.T, atol=1e-14)
    np.testing.assert_array_equal(t, s.theta)


def test_two_axis_draws_average(rng):
    base = random_state(rng, 2, 1)
    a = base.replace(U=np.array([[1.0], [0.0]]), theta=np.zeros(2))
    b = base.replace(U=np.array([[0.0], [1.0]]), theta=np.zeros(2))
    R, t = posterior_means([a, b])
    np.testing.assert_allclose(R, np.diag([0.5, 0.5]))
    np.testing.assert_array_equal(t, [0.0, 0.0])


def test_five_draw_means_and_spectrum(rng):
    draws = [random_state(rng, 5, 2) for _ in range(5)]
    R, t = posterior_means(draws)
    np.testing.assert_allclose(R, sum(d.U @ d.U.T for d in draws) / 5, atol=1e-14)
    np.testing.assert_allclose(t, sum(d.theta for d in draws) / 5, atol=1e-14)
    ev = np.linalg.eigvalsh(R)
    assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8


def test_posterior_means_errors(rng):
    with pytest.raises(ValueError):
        posterior_means([])
    with pytest.raises(ValueError):
        posterior_means([random_state(rng, 4, 2), random_state(rng, 4, 1)])


def test_point_mass_posterior(rng):
    U = random_frame(5, 2, rng)
    est = estimate_subspace(U @ U.T, np.zeros(5))
    assert est.k_hat == 2 and est.unique
    np.testing.assert_allclose(est.R_hat, U @ U.T, atol=1e-10)
    np.testing.assert_allclose(est.theta_hat, 0, atol=1e-12)
    np.testing.assert_allclose(est.eigenvalues, [2, 2, 0, 0, 0], atol=1e-10)


def test_diag_example():
    est = estimate_subspace(np.diag([0.9, 0.1]), np.zeros(2))
    np.testing.assert_allclose(est.objective, [0.0, -0.8, 0.0], atol=1e-12)
    assert est.k_hat == 1 and est.unique
    np.testing.assert_allclose(est.R_hat, np.diag([1.0, 0.0]), atol=1e-12)


def test_tie_is_flagged():
    est = estimate_subspace(np.diag([0.5, 0.5]), np.zeros(2))
    np.testing.assert_allclose(est.objective, 0.0, atol=1e-12)
    assert est.k_hat == 0 and not est.unique


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError):
        estimate_subspace(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))


@st.composite
def posteriors(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 7))
    draws = []
    for _ in range(int(rng.integers(1, 6))):
        k = int(rng.integers(1, m + 1))
        U = random_frame(m, k, rng)
        theta = complete_frame(U) @ rng.standard_normal(m - k) if k < m else np.zeros(m)
        draws.append(AffineSubspace.from_frame(U, theta))
    return draws


@given(posteriors())
def test_estimate_is_valid_subspace(draws):
    R_bar = np.mean([d.R for d in draws], axis=0)
    theta_bar = np.mean([d.theta for d in draws], axis=0)
    est = estimate_subspace(R_bar, theta_bar)
    est.subspace.check(tol=1e-8)
    assert abs(np.trace(est.R_hat) - est.k_hat) < 1e-8
    lam = est.eigenvalues
    if est.unique:
        assert np.all((lam > 1) == (np.arange(len(lam)) < est.k_hat))


def test_estimator_beats_random_candidates(rng):
    for _ in range(5):
        m = int(rng.integers(1, 4))
        draws = []
        for _ in range(int(rng.integers(1, 6))):
            k = int(rng.integers(1, m + 1))
            U = random_frame(m, k, rng)
            th = complete_frame(U) @ rng.standard_normal(m - k) if k < m else np.zeros(m)
            draws.append((U @ U.T, th))
        est = estimate_subspace(np.mean([d[0] for d in draws], 0), np.mean([d[1] for d in draws], 0))
        best = expected_loss(est.R_hat, est.theta_hat, draws)
        for _ in range(500):
            k = int(rng.integers(0, m + 1))
            U = random_frame(m, k, rng) if k else np.zeros((m, 0))
            th = complete_frame(U) @ rng.standard_normal(m - k) if 0 < k < m else (
                rng.standard_normal(m) if k == 0 else np.zeros(m))
            assert best <= expected_loss(U @ U.T, th, draws) + 1e-10


def test_loss_examples(rng):
    a = AffineSubspace(np.diag([1.0, 0.0]), np.zeros(2))
    b = AffineSubspace(np.diag([0.0, 1.0]), np.zeros(2))
    assert loss(a, b) == 2.0
    assert loss(a, a) == 0.0
    s1, s2 = random_state(rng, 4, 2), random_state(rng, 4, 1)
    p1 = (s1.U @ s1.U.T, s1.theta)
    p2 = (s2.U @ s2.U.T, s2.theta)
    assert loss(p1, p2) == loss(p2, p1) > 0
    with pytest.raises(ValueError):
        loss(a, AffineSubspace(np.eye(3), np.zeros(3)))


def test_importance_scores(rng):
    est = estimate_subspace(2 * np.diag([1.0, 0.0, 0.0]), np.zeros(3))
    imp = feature_importance(est, ["a", "b", "c"])
    np.testing.assert_allclose(imp.scores, [1.0, 0.0, 0.0], atol=1e-12)
    U = random_frame(6, 3, rng)
    imp = feature_importance(estimate_subspace(U @ U.T, np.zeros(6)))
    assert abs(imp.scores.sum() - 3) < 1e-8
    np.testing.assert_allclose(imp.norms**2, imp.scores, atol=1e-10)
    assert list(imp.ranking()) == list(np.argsort(-imp.scores, kind="stable"))


def test_norm_column_from_loadings():
    from psc.estimator import FeatureImportance

    row = np.array([[-0.294, 0.233, 0.453]])
    imp = FeatureImportance(("clump thickness",), (row**2).sum(axis=1), np.linalg.norm(row, axis=1), row)
    assert round(float(imp.norms[0]), 3) == 0.588
    table = format_table(imp)
    header = table.splitlines()[0].split()
    assert header == ["Variable", "U[,1]", "U[,2]", "U[,3]", "norm", "score"]
    assert "0.588" in table


def test_csv_writers(tmp_path, rng):
    U = random_frame(4, 2, rng)
    est = estimate_subspace(U @ U.T, np.zeros(4))
    imp = feature_importance(est, ["p", "q", "r", "s"])
    write_importance_csv(imp, tmp_path / "imp.csv")
    write_subspace_csv(est, tmp_path / "sub.csv")
    lines = (tmp_path / "imp.csv").read_text().splitlines()
    assert lines[0] == "feature,loading_1,loading_2,norm,score" and len(lines) == 5
    assert len((tmp_path / "sub.csv").read_text().splitlines()) == 5
