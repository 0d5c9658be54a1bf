import json

import numpy as np
import pytest
from helpers import random_state
from scipy import stats
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

import psc.gibbs as gibbs
from psc.data import sample_observations
from psc.geometry import complete_frame, random_frame
from psc.gibbs import (
    SamplerConfig,
    SamplerError,
    _collapsed_residual,
    allocation_logits,
    frame_log_target,
    frame_log_target_grad,
    gibbs_sweep,
    hmc_frame,
    load_chain,
    run_chain,
    save_chain,
    update_allocations,
    update_atoms,
    update_frame,
    update_origin,
    update_scales,
    update_sticks,
)
from psc.model import LabeledDataset, MixingMeasure, NoiseScales, joint_log_density
from psc.priors import PriorConfig, sample_prior


def _toy(rng, m=4, k=2, c=2, n=30, T=4, cfg=None):
    cfg = cfg or PriorConfig(theta_scale=2.0)
    s = sample_prior(cfg, k, m, c, rng, truncation=T)
    X, y, _ = sample_observations(s, n, rng)
    return s, X, y, cfg


# allocations -----------------------------------------------------------------

def test_single_atom_allocates_everything_to_it(rng):
    s, X, y, _ = _toy(rng, T=1)
    assert np.all(update_allocations(s, X, y, rng) == 0)


def test_allocations_follow_separated_atoms(rng):
    U = np.array([[1.0], [0.0]])
    s = random_state(rng, 2, 1, c=2, T=2).replace(
        U=U, theta=np.zeros(2), scales=NoiseScales(1.0, np.array([0.5])),
        P=MixingMeasure(np.array([0.5, 0.5]), np.array([[-10.0], [10.0]]), np.array([[0.9, 0.1], [0.1, 0.9]])))
    X = np.array([[-10.2, 0.0], [9.7, 1.0], [-9.5, -2.0], [10.4, 0.3]])
    y = np.array([1, 2, 1, 2])
    for _ in range(20):
        np.testing.assert_array_equal(update_allocations(s, X, y, rng), [0, 1, 0, 1])


def test_identical_atoms_give_uniform_allocation(rng):
    s = random_state(rng, 3, 1, c=2, T=4)
    s = s.replace(P=MixingMeasure(np.full(4, 0.25), np.zeros((4, 1)), np.tile([0.3, 0.7], (4, 1))))
    X = rng.standard_normal((5, 3))
    logits = allocation_logits(s, X, np.array([1, 2, 1, 2, 2]))
    np.testing.assert_allclose(logits - logits[:, :1], 0.0, atol=1e-12)


# sticks ----------------------------------------------------------------------

def test_sticks_without_data_follow_prior(rng):
    cfg = PriorConfig(w0=2.0)
    w1 = np.array([update_sticks(np.zeros(0, dtype=int), cfg, 5, rng)[0] for _ in range(20000)])
    # first weight equals the first Beta(1, w0) fraction
    assert abs(w1.mean() - 1 / 3) < 4 * np.sqrt(stats.beta(1, 2).var() / len(w1))


def test_sticks_concentrate_when_w0_vanishes(rng):
    w = update_sticks(np.zeros(50, dtype=int), PriorConfig(w0=1e-8), 6, rng)
    assert w[0] > 0.95


def test_stick_means_match_beta_formula(rng):
    cfg = PriorConfig(w0=1.5)
    z = np.repeat([0, 1, 3], [5, 2, 3])
    W = np.array([update_sticks(z, cfg, 4, rng) for _ in range(20000)])
    counts = np.bincount(z, minlength=4)
    tail = np.array([5, 3, 3, 0])
    a, b = 1 + counts, cfg.w0 + tail
    vmean = a / (a + b)
    expected = np.array([vmean[0], (1 - vmean[0]) * vmean[1], (1 - vmean[0]) * (1 - vmean[1]) * vmean[2]])
    se = W[:, :3].std(axis=0) / np.sqrt(len(W))
    assert np.all(np.abs(W[:, :3].mean(axis=0) - expected) < 4 * se)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)


# atoms -----------------------------------------------------------------------

def test_empty_cluster_draws_from_base(rng):
    cfg = PriorConfig(base_mean=1.0, base_scale=2.0)
    s = random_state(rng, 3, 1, c=2, T=2)
    X, y, z = np.zeros((1, 3)), np.array([1]), np.array([0])
    draws = np.array([update_atoms(s, X, y, z, cfg, rng)[0][1, 0] for _ in range(5000)])
    assert abs(draws.mean() - 1.0) < 4 * 2.0 / np.sqrt(5000)
    assert abs(draws.std() - 2.0) < 0.1


def test_flat_base_gives_observation_mean(rng):
    cfg = PriorConfig(base_scale=1e8)
    s = random_state(rng, 3, 2, c=2, T=2)
    x = rng.standard_normal((1, 3))
    mus = np.array([update_atoms(s, x, np.array([1]), np.array([0]), cfg, rng)[0][0] for _ in range(4000)])
    se = s.scales.sigma / np.sqrt(len(mus))
    assert np.all(np.abs(mus.mean(axis=0) - (x @ s.U)[0]) < 4 * se)


def test_dirichlet_posterior_for_class_counts(rng):
    s = random_state(rng, 2, 1, c=2, T=1)
    X, y, z = np.zeros((4, 2)), np.array([1, 1, 1, 2]), np.zeros(4, dtype=int)
    nus = np.array([update_atoms(s, X, y, z, PriorConfig(), rng)[1][0] for _ in range(20000)])
    se = np.sqrt(stats.beta(4, 2).var() / len(nus))
    assert abs(nus[:, 0].mean() - 2 / 3) < 4 * se


# scales ----------------------------------------------------------------------

def test_scales_without_data_follow_prior(rng):
    cfg = PriorConfig(sigma0_shape=3.0, sigma0_rate=2.0)
    s = random_state(rng, 3, 1)
    s0 = np.array([update_scales(s, np.zeros((0, 3)), np.zeros(0, dtype=int), cfg, rng).sigma0 ** 2
                   for _ in range(20000)])
    assert abs(s0.mean() - 1.0) < 4 * np.sqrt(stats.invgamma(3, scale=2).var() / len(s0))


def test_zero_residuals_give_inverse_gamma_mean(rng):
    cfg = PriorConfig()
    s = random_state(rng, 4, 2)
    n = 6
    X = (s.U @ rng.standard_normal((2, n))).T + s.theta
    draws = np.array([update_scales(s, X, np.zeros(n, dtype=int), cfg, rng).sigma0 ** 2 for _ in range(20000)])
    shape = cfg.sigma0_shape + n * 2 / 2
    expected = cfg.sigma0_rate / (shape - 1)
    assert abs(draws.mean() - expected) < 4 * np.sqrt(stats.invgamma(shape, scale=cfg.sigma0_rate).var() / len(draws))


def test_full_rank_keeps_sigma0(rng):
    s, X, y, cfg = _toy(rng, m=3, k=3)
    assert update_scales(s, X, np.zeros(len(X), dtype=int), cfg, rng).sigma0 == s.scales.sigma0


# origin ----------------------------------------------------------------------

def test_origin_without_data_follows_prior(rng):
    cfg = PriorConfig(theta_scale=3.0)
    s = random_state(rng, 4, 2)
    V = complete_frame(s.U)
    eta = np.array([V.T @ update_origin(s, np.zeros((0, 4)), cfg, rng) for _ in range(5000)])
    assert np.all(np.abs(eta.std(axis=0) - 3.0) < 0.15)


def test_origin_flat_prior_and_shrinkage(rng):
    s = random_state(rng, 3, 1)
    s = s.replace(scales=NoiseScales(0.8, s.scales.sigma))
    V = complete_frame(s.U)
    X = rng.standard_normal((4, 3)) + 2.0
    target = V.T @ X.mean(axis=0)
    for scale in (1e8, 0.5):
        cfg = PriorConfig(theta_scale=scale)
        eta = np.array([V.T @ update_origin(s, X, cfg, rng) for _ in range(20000)])
        prec = 4 / 0.64 + 1 / scale**2
        mean = (4 / 0.64) / prec * target
        assert np.all(np.abs(eta.mean(axis=0) - mean) < 4 / np.sqrt(prec * len(eta)))
        assert np.all(np.abs(s.U.T @ update_origin(s, X, cfg, rng)) < 1e-12)


def test_full_rank_origin_is_zero(rng):
    s, X, _, cfg = _toy(rng, m=3, k=3)
    np.testing.assert_array_equal(update_origin(s, X, cfg, rng), np.zeros(3))


# frame target ----------------------------------------------------------------

def test_collapsed_residual_matches_dense_gaussian(rng):
    cfg = PriorConfig(theta_scale=1.7)
    for m, k, n in [(3, 1, 5), (5, 2, 4), (4, 3, 6)]:
        U = random_frame(m, k, rng)
        X = 2 * rng.standard_normal((n, m))
        f, _ = _collapsed_residual(X, U, X @ U, 0.6, cfg)
        R = (X @ complete_frame(U)).ravel()
        d = m - k
        cov = 0.36 * np.eye(n * d) + cfg.theta_scale**2 * np.kron(np.ones((n, n)), np.eye(d))
        assert abs(f - multivariate_normal(np.zeros(n * d), cov).logpdf(R)) < 1e-8


def test_frame_gradient_matches_finite_differences(rng):
    from scipy.linalg import expm

    for k, m in [(1, 3), (2, 5), (3, 3)]:
        cfg = PriorConfig(theta_scale=2.0, bmf_A=rng.standard_normal((k, m)),
                          bmf_B=rng.standard_normal((k, k)), bmf_C=rng.standard_normal((m, m)))
        s, X, y, _ = _toy(rng, m=m, k=k, cfg=PriorConfig(theta_scale=2.0))
        f, G = frame_log_target_grad(s, X, y, cfg)
        assert abs(f - frame_log_target(s, X, y, cfg)) < 1e-9
        E = np.triu(rng.standard_normal((m, m)), 1)
        E = E - E.T
        h = 1e-6
        fd = (frame_log_target(s.replace(U=expm(h * E) @ s.U), X, y, cfg)
              - frame_log_target(s.replace(U=expm(-h * E) @ s.U), X, y, cfg)) / (2 * h)
        assert abs(fd - np.sum(np.triu(G, 1) * np.triu(E, 1))) < 1e-5 * max(1.0, abs(fd))


def test_zero_step_is_identity_and_always_accepted(rng):
    s, X, y, cfg = _toy(rng)
    new, prob, ok, _ = update_frame(s, X, y, cfg, 0.0, rng)
    assert ok and prob == 1.0
    np.testing.assert_allclose(new.U, s.U, atol=1e-14)


def test_flat_target_accepts_everything(rng):
    s = random_state(rng, 4, 2)
    X, y = np.zeros((0, 4)), np.zeros(0, dtype=int)
    for _ in range(20):
        s, prob, ok, _ = update_frame(s, X, y, PriorConfig(), 0.7, rng)
        assert ok and prob == 1.0
        s, prob, ok, _ = hmc_frame(s, X, y, PriorConfig(), 0.7, 5, rng)
        assert ok and abs(prob - 1.0) < 1e-9


def _circle_oracle(s, X, y, cfg, phis):
    """Brute-force log target on V_{1,2}: kernel mixture times numerically integrated residual."""
    eta = np.linspace(-12, 12, 24001)
    out = []
    for phi in phis:
        u = np.array([np.cos(phi), np.sin(phi)])
        v = np.array([-np.sin(phi), np.cos(phi)])
        a = X @ u
        kern = (np.log(s.P.weights) + stats.norm.logpdf(a[:, None], s.P.mu[:, 0], s.scales.sigma[0])
                + np.log(s.P.nu[:, y - 1].T))
        r = X @ v
        inner = stats.norm.logpdf(r[:, None], eta[None], s.scales.sigma0).sum(axis=0)
        inner += stats.norm.logpdf(eta, 0, cfg.theta_scale)
        resid = logsumexp(inner) + np.log(eta[1] - eta[0])
        out.append(logsumexp(kern, axis=1).sum() + resid)
    return np.array(out)


def test_circle_manifold_metropolis_oracle():
    rng = np.random.default_rng(2024)
    cfg = PriorConfig(theta_scale=1.0)
    s = sample_prior(cfg, 1, 2, 2, rng, truncation=3)
    s = s.replace(scales=NoiseScales(1.0, np.array([1.5])))
    X, y, _ = sample_observations(s, 6, rng)

    grid = np.linspace(-np.pi, np.pi, 721)[:-1]
    f_grid = _circle_oracle(s, X, y, cfg, grid)
    f_impl = np.array([frame_log_target(s.replace(U=np.array([[np.cos(p)], [np.sin(p)]])), X, y, cfg)
                       for p in grid])
    np.testing.assert_allclose(f_impl, f_grid, atol=1e-7)

    # acceptance decisions: each returned probability equals the analytic ratio
    state = s
    cur = np.arctan2(state.U[1, 0], state.U[0, 0])
    phis = []
    for i in range(40000):
        state, prob, ok, _ = update_frame(state, X, y, cfg, 1.0, rng)
        new = np.arctan2(state.U[1, 0], state.U[0, 0])
        if i < 200 and ok and new != cur:
            ratio = np.exp(min(0.0, *(_circle_oracle(s, X, y, cfg, [new]) - _circle_oracle(s, X, y, cfg, [cur]))))
            assert abs(prob - ratio) < 1e-6
        cur = new
        phis.append(cur)
    # stationary law matches the discretized target
    dens = np.exp(f_grid - f_grid.max())
    dens /= dens.sum()
    hist = np.histogram(phis, bins=36, range=(-np.pi, np.pi))[0] / len(phis)
    coarse = dens.reshape(36, -1).sum(axis=1)
    assert 0.5 * np.abs(hist - coarse).sum() < 0.05


# full sweeps and chains --------------------------------------------------------

def test_sweep_preserves_constraints(rng):
    s, X, y, cfg = _toy(rng, m=5, k=2)
    for move in ("hmc", "rw"):
        state = s
        for _ in range(30):
            state, _, _, ll = gibbs_sweep(state, X, y, cfg, 0.2, rng, frame_move=move)
            state.check()
            assert abs(ll - joint_log_density(state, X, y).sum()) < 1e-8


def _small_data(seed=0):
    rng = np.random.default_rng(seed)
    s = sample_prior(PriorConfig(theta_scale=2.0), 2, 4, 2, rng, truncation=4)
    X, y, _ = sample_observations(s, 40, rng)
    return LabeledDataset(X, y, 2)


def test_chain_length_and_single_draw():
    data = _small_data()
    chain = run_chain(data, 2, sampler_cfg=SamplerConfig(iterations=6, burn_in=5, truncation=5))
    assert len(chain) == 1 and chain.iterations == [5]
    chain = run_chain(data, 2, sampler_cfg=SamplerConfig(iterations=20, burn_in=4, thin=3, truncation=5))
    assert chain.iterations == [4, 7, 10, 13, 16, 19]


def test_chain_is_deterministic_given_seed():
    data = _small_data()
    cfg = SamplerConfig(iterations=30, burn_in=10, truncation=5, seed=9)
    a, b = run_chain(data, 2, sampler_cfg=cfg), run_chain(data, 2, sampler_cfg=cfg)
    for s1, s2 in zip(a.draws, b.draws):
        np.testing.assert_array_equal(s1.U, s2.U)
        np.testing.assert_array_equal(s1.P.mu, s2.P.mu)
    np.testing.assert_array_equal(a.log_joint, b.log_joint)


@pytest.mark.parametrize("move", ["hmc", "rw"])
def test_chain_invariants(move):
    data = _small_data(3)
    chain = run_chain(data, 2, sampler_cfg=SamplerConfig(iterations=300, burn_in=100, truncation=6,
                                                         frame_move=move, seed=1))
    for state in chain.draws:
        state.check()
        assert np.linalg.norm(state.U.T @ state.theta) < 1e-10
    assert np.all(np.isfinite(chain.log_joint))
    # step size frozen after burn-in
    assert np.all(chain.step_trace[100:] == chain.step_trace[100])
    assert 0 < chain.acceptance["sampling"] <= 1


def test_nonfinite_log_joint_aborts_with_dump(monkeypatch):
    monkeypatch.setattr(gibbs, "log_prior", lambda state, cfg: float("nan"))
    with pytest.raises(SamplerError) as err:
        run_chain(_small_data(), 2, sampler_cfg=SamplerConfig(iterations=5, burn_in=1, truncation=3))
    assert err.value.iteration == 0
    dump = json.loads(str(err.value).split(": ", 1)[1])
    assert dump["k"] == 2


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(frame_move="gibbs")
    with pytest.raises(ValueError):
        SamplerConfig.from_dict({"iterations": 5, "bogus": 1})
    assert SamplerConfig.from_dict(SamplerConfig(seed=4).to_dict()) == SamplerConfig(seed=4)


def test_chain_file_roundtrip_is_bit_exact(tmp_path):
    chain = run_chain(_small_data(), 2, sampler_cfg=SamplerConfig(iterations=25, burn_in=5, truncation=4))
    path = tmp_path / "k=2.jsonl"
    save_chain(chain, path)
    loaded = load_chain(path)
    assert loaded.k == 2 and loaded.iterations == chain.iterations
    for a, b in zip(chain.draws, loaded.draws):
        for x, y in [(a.U, b.U), (a.theta, b.theta), (a.scales.sigma, b.scales.sigma),
                     (a.P.weights, b.P.weights), (a.P.mu, b.P.mu), (a.P.nu, b.P.nu)]:
            np.testing.assert_array_equal(x, y)
        assert a.scales.sigma0 == b.scales.sigma0
    assert loaded.draw_log_joint == chain.draw_log_joint
    save_chain(loaded, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_load_chain_reports_bad_lines(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"iter": 0}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        load_chain(p)
