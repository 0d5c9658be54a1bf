"""Blocked Gibbs sampler for the principal subspace classifier.

One sweep updates, in order: allocations z, stick weights, atoms (mu, nu),
noise scales, then the pair (U, theta).  The pair is drawn as a block: U
by a Metropolis-type move whose target integrates out both the allocations
and theta, followed by an exact conjugate draw of theta given U.  Every
other block is an exact conjugate draw.

Both frame moves left-multiply U by a rotation ``Q = cayley(eps * A)`` with
A skew-symmetric, so U stays orthonormal without projection.  ``"rw"`` draws
A at random; ``Q`` and ``Q^{-1}`` are equally likely and rotations preserve
the uniform measure on frames, so the proposal is symmetric.  ``"hmc"`` (the
default) integrates Hamiltonian dynamics on the rotation group with skew
momenta.

Atom indices in the allocation vector are 0-based.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.cluster.vq import kmeans2

from .geometry import cayley, complete_frame, polar_retract, random_skew, reorthonormalize
from .model import (
    LOG_2PI,
    LabeledDataset,
    MixingMeasure,
    ModelState,
    NoiseScales,
    Standardization,
    joint_log_density,
    kernel_logpdf,
    logsumexp_rows,
    residual_logpdf,
    residual_sq,
)
from .priors import (
    PriorConfig,
    log_bmf_density_unnormalized,
    log_prior,
    sample_inv_gamma,
    stick_breaking,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 1
    truncation: int = 20
    metropolis_step: float = 0.02
    adapt_target: float = 0.65
    frame_steps: int = 1
    frame_move: str = "hmc"
    leapfrog_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.truncation < 1 or self.frame_steps < 1:
            raise ValueError("iterations, thin, truncation and frame_steps must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if not 0 < self.adapt_target < 1:
            raise ValueError("adapt_target must lie in (0, 1)")
        if self.metropolis_step < 0:
            raise ValueError("metropolis_step must be non-negative")
        if self.frame_move not in ("hmc", "rw"):
            raise ValueError("frame_move must be 'hmc' or 'rw'")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sampler settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PosteriorChain:
    """Stored (post burn-in, thinned) draws plus run diagnostics."""

    k: int
    draws: list
    iterations: list
    draw_log_joint: list
    log_joint: np.ndarray = None
    step_trace: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    standardization: Standardization = None
    feature_names: tuple = ()

    def __len__(self):
        return len(self.draws)

    @property
    def m(self):
        return self.draws[0].m


class SamplerError(RuntimeError):
    """Raised when the log joint density becomes non-finite."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


def _unpack(data):
    if isinstance(data, LabeledDataset):
        return data.X, data.y, data.c
    X, y, c = data
    return np.asarray(X, dtype=float), np.asarray(y, dtype=int), int(c)


def _categorical(logp, rng):
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    cum = np.cumsum(p, axis=1)
    u = rng.uniform(size=(len(p), 1)) * cum[:, -1:]
    return np.minimum((cum < u).sum(axis=1), p.shape[1] - 1)


def allocation_logits(state, X, y):
    """Unnormalized log P(z_i = j | ...) = log w_j + log N_k(U'x_i; mu_j) + log nu_{j,y_i}."""
    coords = X @ state.U
    with np.errstate(divide="ignore"):
        return (
            kernel_logpdf(coords, state.P.mu, state.scales.sigma)
            + np.log(state.P.weights)
            + np.log(state.P.nu[:, y - 1].T)
        )


def update_allocations(state, X, y, rng):
    if len(X) == 0:
        return np.zeros(0, dtype=int)
    return _categorical(allocation_logits(state, X, y), rng)


def update_sticks(z, cfg, T, rng):
    """Stick fractions from Beta(1 + n_j, w0 + sum_{l>j} n_l); the last absorbs the rest."""
    counts = np.bincount(z, minlength=T)
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0]))
    v = rng.beta(1.0 + counts, cfg.w0 + tail)
    return stick_breaking(v)


def update_atoms(state, X, y, z, cfg, rng):
    """Conjugate Normal draws for mu_j and Dirichlet draws for nu_j."""
    T, k, c = state.P.truncation, state.k, state.c
    coords = X @ state.U
    onehot = np.zeros((len(z), T))
    onehot[np.arange(len(z)), z] = 1.0
    counts = onehot.sum(axis=0)
    sums = onehot.T @ coords
    s2 = state.scales.sigma**2
    prec = 1.0 / cfg.base_scale**2 + counts[:, None] / s2
    mean = (cfg.base_mean / cfg.base_scale**2 + sums / s2) / prec
    mu = mean + rng.standard_normal((T, k)) / np.sqrt(prec)
    class_counts = onehot.T @ np.eye(c)[y - 1] if len(z) else np.zeros((T, c))
    nu = rng.gamma(cfg.alpha(c) + class_counts)
    nu /= nu.sum(axis=1, keepdims=True)
    return mu, nu


def update_scales(state, X, z, cfg, rng):
    """Inverse-Gamma draws for each sigma_l^2 and for sigma0^2."""
    n, k, m = len(X), state.k, state.m
    coords = X @ state.U
    dev = coords - state.P.mu[z]
    ss = 0.5 * np.sum(dev**2, axis=0)
    sigma = np.sqrt(sample_inv_gamma(cfg.sigma_shape + 0.5 * n, cfg.sigma_rate + ss, rng))
    if k == m:
        return NoiseScales(state.scales.sigma0, sigma)
    rss = 0.5 * residual_sq(X, state.U, state.theta, coords).sum()
    sigma0 = sample_inv_gamma(cfg.sigma0_shape + 0.5 * n * (m - k), cfg.sigma0_rate + rss, rng)
    return NoiseScales(float(np.sqrt(sigma0)), sigma)


def update_origin(state, X, cfg, rng):
    """Conjugate Normal draw of theta on the orthogonal complement of span(U)."""
    k, m = state.k, state.m
    if k == m:
        return np.zeros(m)
    V = complete_frame(state.U)
    s0sq = state.scales.sigma0**2
    prec = len(X) / s0sq + 1.0 / cfg.theta_scale**2
    mean = (V.T @ X.sum(axis=0)) / s0sq / prec
    eta = mean + rng.standard_normal(m - k) / np.sqrt(prec)
    theta = V @ eta
    return theta - state.U @ (state.U.T @ theta)


def _collapsed_residual(X, U, coords, sigma0, cfg):
    """Residual log likelihood with theta integrated out, and its gradient in U.

    theta = V eta with eta ~ N(0, s^2 I); the residual coordinates
    r_i = V'x_i enter only through sum ||r_i||^2 and ||mean r||^2, both of
    which are expressible through U alone.
    """
    n, m = X.shape
    d = m - U.shape[1]
    if d == 0 or n == 0:
        return 0.0, np.zeros_like(U)
    s0sq, s2 = sigma0**2, cfg.theta_scale**2
    xbar = X.mean(axis=0)
    ubar = U.T @ xbar
    ss = np.einsum("ij,ij->", X, X) - np.einsum("ij,ij->", coords, coords)
    rbar_sq = xbar @ xbar - ubar @ ubar
    prec = n / s0sq + 1.0 / s2
    shrink = n**2 / (s0sq**2 * prec)
    f = (-0.5 * n * d * (LOG_2PI + np.log(s0sq)) - 0.5 * ss / s0sq
         - 0.5 * d * np.log(s2 * prec) + 0.5 * shrink * rbar_sq)
    grad = X.T @ coords / s0sq - shrink * np.outer(xbar, ubar)
    return float(f), grad


def frame_log_target(state, X, y, cfg):
    """Log density of U given the mixing measure and scales.

    Allocations and the origin are both integrated out; the BMF term is
    included.
    """
    return frame_log_target_grad(state, X, y, cfg)[0]


def propose_frame(state, step, rng):
    """Rotate U by ``cayley(step * A)``.

    ``A`` is a standard Gaussian skew matrix restricted to generators that
    touch span(U): rotations inside span(U) and between span(U) and its
    complement.  The law of ``A`` depends on the subspace only and is
    invariant under ``A -> -A``, so the move is reversible with respect to
    the invariant measure and the Metropolis ratio needs no proposal term.
    """
    U = state.U
    m, k = U.shape
    Ab = np.zeros((m, m))
    Ab[:k, :k] = random_skew(k, rng)
    if k < m:
        W = np.hstack((U, complete_frame(U)))
        C = rng.standard_normal((m - k, k))
        Ab[k:, :k] = C
        Ab[:k, k:] = -C.T
    else:
        W = U
    return _rotate(state, cayley(step * (W @ Ab @ W.T)))


def _accept_prob(log_ratio):
    return float(np.exp(min(0.0, log_ratio))) if np.isfinite(log_ratio) else 0.0


def update_frame(state, X, y, cfg, step, rng, current=None):
    """One random-walk Metropolis move on U.

    Returns (state, acceptance probability, accepted, log target).
    """
    if current is None:
        current = frame_log_target(state, X, y, cfg)
    proposal = propose_frame(state, step, rng)
    new = frame_log_target(proposal, X, y, cfg)
    prob = _accept_prob(new - current)
    if rng.uniform() < prob:
        return proposal, prob, True, new
    return state, prob, False, current


def _bmf_grad(U, cfg):
    m, k = U.shape
    g = np.zeros((m, k))
    if cfg.bmf_A is not None:
        g += cfg.bmf_A.T
    if cfg.bmf_B is not None and cfg.bmf_C is not None:
        g += cfg.bmf_C.T @ U @ cfg.bmf_B.T + cfg.bmf_C @ U @ cfg.bmf_B
    return g


def frame_log_target_grad(state, X, y, cfg):
    """Frame log target and its gradient along left rotations of U.

    The gradient is returned as a skew matrix ``G`` with
    ``d/dt f(exp(tE) U) = sum_{a<b} G_ab E_ab`` for skew ``E``.
    """
    U = state.U
    coords = X @ U
    with np.errstate(divide="ignore"):
        lk = (
            kernel_logpdf(coords, state.P.mu, state.scales.sigma)
            + np.log(state.P.weights)
            + np.log(state.P.nu[:, y - 1].T)
        )
    lse = logsumexp_rows(lk)
    resp = np.exp(lk - lse[:, None])
    d_U = X.T @ (-(coords - resp @ state.P.mu) / state.scales.sigma**2) + _bmf_grad(U, cfg)
    f_res, g_res = _collapsed_residual(X, U, coords, state.scales.sigma0, cfg)
    f = lse.sum() + f_res + log_bmf_density_unnormalized(U, cfg)
    M = (d_U + g_res) @ U.T
    return f, M - M.T


def _rotate(state, Q):
    # theta is left stale; the origin update that follows the frame move redraws it
    return state.replace(U=reorthonormalize(Q @ state.U))


def hmc_frame(state, X, y, cfg, step, n_leapfrog, rng, current=None):
    """Hamiltonian move on the rotation group acting on U.

    Momenta are skew matrices with independent standard normal upper
    entries; positions advance by ``cayley(step * P)``.  The leapfrog map is
    volume preserving and reversible because the Cayley map satisfies
    ``cayley(-A) = cayley(A)^{-1}`` and Haar measure is bi-invariant.
    Returns (state, acceptance probability, accepted, (log target, gradient)).
    """
    f0, g = frame_log_target_grad(state, X, y, cfg) if current is None else current
    m = state.m
    P = random_skew(m, rng)
    h0 = -f0 + 0.25 * np.sum(P * P)
    eps = step * np.exp(rng.uniform(np.log(0.05), np.log(1.2)))
    prop, f, g1 = state, f0, g
    P = P + 0.5 * eps * g1
    for i in range(n_leapfrog):
        try:
            if not np.all(np.isfinite(P)):
                raise np.linalg.LinAlgError("non-finite momentum")
            prop = _rotate(prop, cayley(eps * P))
        except np.linalg.LinAlgError:
            # diverging trajectory: reject
            return state, 0.0, False, (f0, g)
        f, g1 = frame_log_target_grad(prop, X, y, cfg)
        P = P + (eps if i < n_leapfrog - 1 else 0.5 * eps) * g1
    h1 = -f + 0.25 * np.sum(P * P)
    prob = _accept_prob(h0 - h1)
    if rng.uniform() < prob:
        return prop, prob, True, (f, g1)
    return state, prob, False, (f0, g)


def gibbs_sweep(state, X, y, cfg, step, rng, frame_steps=1, frame_move="hmc", n_leapfrog=10):
    """One full sweep.

    Returns (state, summed frame acceptance probability, accepted frame
    moves, log likelihood with allocations integrated out).
    """
    T = state.P.truncation
    z = update_allocations(state, X, y, rng)
    w = update_sticks(z, cfg, T, rng)
    state = state.replace(P=MixingMeasure(w, state.P.mu, state.P.nu))
    mu, nu = update_atoms(state, X, y, z, cfg, rng)
    state = state.replace(P=MixingMeasure(w, mu, nu))
    state = state.replace(scales=update_scales(state, X, z, cfg, rng))
    accepted = prob_sum = 0
    current = None
    for _ in range(frame_steps):
        if frame_move == "hmc":
            state, prob, ok, current = hmc_frame(state, X, y, cfg, step, n_leapfrog, rng, current)
            target = current[0]
        else:
            state, prob, ok, current = update_frame(state, X, y, cfg, step, rng, current)
            target = current
        accepted += ok
        prob_sum += prob
    # (U, theta) is drawn jointly: U from its theta-marginal, then theta given U
    state = state.replace(theta=update_origin(state, X, cfg, rng))
    return state, prob_sum, accepted, float(joint_log_density(state, X, y).sum())


def initial_state(X, y, c, k, cfg, truncation, rng):
    """Data-driven starting point: PCA frame, k-means atoms, moment-matched scales."""
    n, m = X.shape
    xbar = X.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(X, rowvar=False) if n > 1 else np.eye(m))
    U = evecs[:, ::-1][:, :k]
    U = U * np.where(U[np.argmax(np.abs(U), axis=0), np.arange(k)] < 0, -1.0, 1.0)
    U = polar_retract(U)
    theta = xbar - U @ (U.T @ xbar) if k < m else np.zeros(m)
    coords = X @ U
    n_init = max(1, min(truncation, 10, n))
    mu = cfg.base_mean + cfg.base_scale * rng.standard_normal((truncation, k))
    nu = rng.dirichlet(cfg.alpha(c), size=truncation)
    w = np.full(truncation, 1e-3)
    sigma = np.ones(k)
    if n > 0:
        centroids, labels = kmeans2(coords, n_init, minit="++", seed=rng, missing="warn")
        alpha = cfg.alpha(c)
        for j in range(n_init):
            members = labels == j
            if not members.any():
                continue
            mu[j] = centroids[j]
            cc = np.bincount(y[members] - 1, minlength=c) + alpha
            nu[j] = cc / cc.sum()
            w[j] += members.sum()
        spread = coords - centroids[labels]
        sigma = np.sqrt(np.maximum(spread.var(axis=0), 1e-2))
    w /= w.sum()
    if k < m and n > 0:
        rsq = residual_sq(X, U, theta, coords)
        sigma0 = float(np.sqrt(max(rsq.mean() / (m - k), 1e-4)))
    else:
        sigma0 = 1.0
    return ModelState(U, theta, NoiseScales(sigma0, sigma), MixingMeasure(w, mu, nu))


def log_joint(state, X, y, cfg):
    ll = joint_log_density(state, X, y).sum() if len(X) else 0.0
    return ll + log_prior(state, cfg)


def run_chain(data, k, prior_cfg=None, sampler_cfg=None, init=None, rng=None):
    """Run one chain at fixed subspace dimension ``k``.

    ``data`` is a :class:`LabeledDataset` or a tuple ``(X, y, c)``.  The chain is
    a deterministic function of ``sampler_cfg.seed`` unless ``rng`` is given.
    During burn-in the frame step size follows a Robbins-Monro recursion on
    the acceptance probability with gain ``(t + 10)^-0.6``; it is then
    frozen, so the stored draws come from a time-homogeneous kernel.
    """
    prior_cfg = prior_cfg or PriorConfig()
    sampler_cfg = sampler_cfg or SamplerConfig()
    X, y, c = _unpack(data)
    n, m = X.shape
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    if rng is None:
        rng = np.random.default_rng(sampler_cfg.seed)
    T = sampler_cfg.truncation
    state = init if init is not None else initial_state(X, y, c, k, prior_cfg, T, rng)

    step = sampler_cfg.metropolis_step
    log_step = np.log(step) if step > 0 else None
    late = []
    total_acc = {"burn_in": [0, 0], "sampling": [0, 0]}
    trace = np.empty(sampler_cfg.iterations)
    steps = np.empty(sampler_cfg.iterations)
    draws, iters, draw_lj = [], [], []
    for it in range(sampler_cfg.iterations):
        state, prob, acc, ll = gibbs_sweep(
            state, X, y, prior_cfg, step, rng, sampler_cfg.frame_steps,
            sampler_cfg.frame_move, sampler_cfg.leapfrog_steps,
        )
        phase = "burn_in" if it < sampler_cfg.burn_in else "sampling"
        total_acc[phase][0] += acc
        total_acc[phase][1] += sampler_cfg.frame_steps
        steps[it] = step
        if it < sampler_cfg.burn_in and log_step is not None:
            rate = prob / sampler_cfg.frame_steps
            log_step += (rate - sampler_cfg.adapt_target) / (it + 10) ** 0.6
            log_step = float(np.clip(log_step, np.log(1e-5), np.log(2.0)))
            late.append(log_step)
            step = float(np.exp(log_step))
            if it == sampler_cfg.burn_in - 1:
                # freeze at the geometric mean of the last quarter of burn-in
                step = float(np.exp(np.mean(late[-max(1, len(late) // 4):])))
        lj = ll + log_prior(state, prior_cfg)
        trace[it] = lj
        if not np.isfinite(lj):
            dump = json.dumps(state_to_record(state, it, lj))
            raise SamplerError(f"non-finite log joint at iteration {it}: {dump}", state, it)
        if it >= sampler_cfg.burn_in and (it - sampler_cfg.burn_in) % sampler_cfg.thin == 0:
            draws.append(state)
            iters.append(it)
            draw_lj.append(float(lj))
    acceptance = {ph: (a / t if t else float("nan")) for ph, (a, t) in total_acc.items()}
    log.debug("k=%d chain done, frame acceptance %s, final step %.4g", k, acceptance, step)
    data_std = data.standardization if isinstance(data, LabeledDataset) else None
    names = data.feature_names if isinstance(data, LabeledDataset) else ()
    return PosteriorChain(k, draws, iters, draw_lj, trace, steps, acceptance, data_std, names)


def state_to_record(state, iteration, log_joint_value):
    return {
        "iter": int(iteration),
        "k": state.k,
        "U": state.U.ravel(order="F").tolist(),
        "theta": state.theta.tolist(),
        "sigma0": float(state.scales.sigma0),
        "sigma": state.scales.sigma.tolist(),
        "weights": state.P.weights.tolist(),
        "atoms": [{"mu": a.mu.tolist(), "nu": a.nu.tolist()} for a in state.P.atoms],
        "log_joint": float(log_joint_value),
    }


def record_to_state(rec):
    k = rec["k"]
    theta = np.asarray(rec["theta"], dtype=float)
    m = len(theta)
    U = np.asarray(rec["U"], dtype=float).reshape((m, k), order="F")
    mu = np.asarray([a["mu"] for a in rec["atoms"]], dtype=float).reshape(-1, k)
    nu = np.asarray([a["nu"] for a in rec["atoms"]], dtype=float)
    P = MixingMeasure(np.asarray(rec["weights"], dtype=float), mu, nu)
    scales = NoiseScales(float(rec["sigma0"]), np.asarray(rec["sigma"], dtype=float))
    return ModelState(U, theta, scales, P)


def save_chain(chain, path):
    """Write one JSON record per stored draw (line-delimited)."""
    with open(path, "w") as fh:
        for it, state, lj in zip(chain.iterations, chain.draws, chain.draw_log_joint):
            fh.write(json.dumps(state_to_record(state, it, lj)) + "\n")


def load_chain(path, standardization=None, feature_names=()):
    draws, iters, lj = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                draws.append(record_to_state(rec))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed chain record ({exc})") from exc
            iters.append(rec["iter"])
            lj.append(rec["log_joint"])
    if not draws:
        raise ValueError(f"{path}: no draws")
    ks = {d.k for d in draws}
    if len(ks) != 1:
        raise ValueError(f"{path}: draws disagree on k")
    return PosteriorChain(
        ks.pop(), draws, iters, lj, np.asarray(lj), None, {}, standardization, tuple(feature_names)
    )
