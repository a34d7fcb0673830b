"""Fingerprint policy optimisation and the comparison methods.

Every method runs the same loop body. The only differences are how the
environment variable is sampled for the training batch and which trajectories
reach the policy update:

============  ==============================================================
method        training theta / trajectories
============  ==============================================================
FPO           theta ~ q_psi, psi chosen by GP-UCB given the policy fingerprint
Naive         theta ~ p(theta)
Enum          one sub-batch per support point, gradients weighted by p(theta)
RandomPsi     theta ~ q_psi, psi uniform in its box every iteration
FixedPsi      theta ~ q_psi with psi held constant
EPOpt         theta ~ p(theta), update on the worst epsilon-fraction of episodes
============  ==============================================================

The functional ``*_iteration`` helpers operate on an :class:`FpoState` and a
:class:`RunContext`; the estimator classes wrap them behind ``fit``/``predict``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .acquisition import AcquisitionConfig, select_psi, to_unit
from .envs import DiscretePrior
from .evaluation import QuadratureConfig, estimate_j
from .gp import GPDataset, GPInput, HellingerProductGP
from .policy import GaussianMLPPolicy, fit_fingerprint
from .polgrad import (Batch, PolGradConfig, collect_batch, compute_advantages,
                      fit_baseline, kl_constrained_update, policy_gradient)

logger = logging.getLogger(__name__)

RNG_STREAMS = ("init", "collection", "evaluation", "acquisition", "gp")


# ---------------------------------------------------------------------------
# psi -> q_psi(theta)
# ---------------------------------------------------------------------------


class BetaPsi:
    """psi = (a, b) in a box, mapped to Beta(a, b) over a continuous theta in [0, 1]."""

    def __init__(self, bounds=((0.05, 20.0), (0.05, 20.0)), prior_psi=(2.0, 1.0)):
        self.bounds = np.asarray(bounds, dtype=float)
        self.prior_psi = np.asarray(prior_psi, dtype=float)

    def sampler(self, psi):
        a, b = float(psi[0]), float(psi[1])
        return lambda rng, n: rng.beta(a, b, size=n)

    @staticmethod
    def mean(psi):
        return float(psi[0] / (psi[0] + psi[1]))


class BernoulliPsi:
    """psi in [0, 1] is the probability of theta = 1 on the support {0, 1}."""

    def __init__(self, bounds=((0.0, 1.0),), prior_psi=(0.02,)):
        self.bounds = np.asarray(bounds, dtype=float)
        self.prior_psi = np.asarray(prior_psi, dtype=float)

    def sampler(self, psi):
        p = float(np.clip(psi[0], 0.0, 1.0))
        return DiscretePrior([0.0, 1.0], [1.0 - p, p]).sample

    @staticmethod
    def mean(psi):
        return float(psi[0])


def psi_mapping_for(env):
    if env.discrete:
        return BernoulliPsi(prior_psi=(float(env.probs[-1]),))
    return BetaPsi(prior_psi=(env.prior.a, env.prior.b))


# ---------------------------------------------------------------------------
# State and context
# ---------------------------------------------------------------------------


@dataclass
class RunContext:
    env: object
    policy: GaussianMLPPolicy
    polgrad: PolGradConfig
    quadrature: QuadratureConfig
    n_iterations: int
    rngs: dict
    psi_mapping: object
    fingerprint: str = "state"
    acquisition: AcquisitionConfig = None
    acquisition_fn: object = None
    gp_restarts: int = 8
    pair_next_fingerprint: bool = False
    epsilon: float = 1.0
    rejection_start_iter: int = 0
    upper_tail: bool = False


@dataclass
class FpoState:
    params: np.ndarray
    fingerprint: object
    iteration: int = 0
    psi_history: list = field(default_factory=list)
    j_history: list = field(default_factory=list)
    gp_data: GPDataset = field(default_factory=GPDataset)
    gp: object = None
    history: list = field(default_factory=list)
    gp_iterations: list = field(default_factory=list)


def make_rngs(random_state):
    """Independent generators per phase, derived from one seed."""
    if isinstance(random_state, np.random.SeedSequence):
        ss = random_state
    else:
        ss = np.random.SeedSequence(random_state)
    return dict(zip(RNG_STREAMS, (np.random.default_rng(s) for s in ss.spawn(len(RNG_STREAMS)))))


def evaluate_policy(ctx, params, iteration):
    """J estimate and fingerprint from the same evaluation rollouts."""
    est = estimate_j(ctx.env, ctx.policy, params, ctx.quadrature, ctx.rngs["evaluation"])
    fp = fit_fingerprint(est.trajectories, ctx.fingerprint, iteration)
    return est, fp


def init_state(ctx, initial_psi=None):
    params = ctx.policy.init_params(ctx.rngs["init"])
    _, fp = evaluate_policy(ctx, params, 0)
    state = FpoState(params=params, fingerprint=fp)
    if initial_psi is not None:
        state.psi_history.append(np.asarray(initial_psi, dtype=float))
    return state


def polopt(ctx, params, trajectories, weights=None, advantages=None):
    """One KL-constrained policy update on ``trajectories``."""
    batch = Batch.from_trajectories(trajectories, ctx.env.horizon)
    if weights is not None:
        batch.weights = np.asarray(weights, dtype=float)
    if advantages is None:
        baseline = fit_baseline(batch, ctx.polgrad.gamma, ctx.polgrad.baseline_ridge)
        advantages, _ = compute_advantages(batch, baseline, ctx.polgrad)
    g = policy_gradient(ctx.policy, params, batch, advantages)
    return kl_constrained_update(ctx.policy, params, g, batch, advantages, ctx.polgrad)


def sub_batch_advantages(ctx, trajectories):
    """Centred advantages of one sub-batch with its own baseline, as if trained in isolation."""
    batch = Batch.from_trajectories(trajectories, ctx.env.horizon)
    baseline = fit_baseline(batch, ctx.polgrad.gamma, ctx.polgrad.baseline_ridge)
    adv, _ = compute_advantages(batch, baseline, ctx.polgrad, normalize=False)
    return adv - adv.mean()


def _finish(ctx, state, psi_used, new_params, info, t0):
    """Evaluate the new policy and append the history record."""
    n = state.iteration + 1
    est, fp = evaluate_policy(ctx, new_params, n)
    state.history.append({
        "iteration": n,
        "psi": np.asarray(psi_used, dtype=float),
        "J": est.value,
        "fp_mean": fp.mean,
        "fp_std": fp.std,
        "kl": info.kl,
        "accepted": info.accepted,
        "j_converged": est.converged,
        "seconds": time.perf_counter() - t0,
    })
    state.j_history.append(est.value)
    state.params = new_params
    state.iteration = n
    return est, fp


def _sample_and_update(ctx, state, sampler):
    trajs = collect_batch(ctx.env, ctx.policy, state.params, sampler, ctx.polgrad.batch_size,
                          ctx.rngs["collection"])
    return polopt(ctx, state.params, trajs)


def _gp_iteration_input(ctx, n):
    return n / max(ctx.n_iterations, 1)


def fpo_iteration(state, ctx):
    """One pass of the FPO loop body.

    Trains on theta ~ q_{psi_{n-1}}, evaluates J(pi_n), adds the GP row
    ((psi_{n-1}, fingerprint(pi_{n-1})), J(pi_n)), refits the GP and selects psi_n
    for the fingerprint of pi_n. Mutates and returns ``state``.
    """
    t0 = time.perf_counter()
    psi_prev = state.psi_history[-1]
    fp_prev = state.fingerprint
    new_params, info = _sample_and_update(ctx, state, ctx.psi_mapping.sampler(psi_prev))
    est, fp = _finish(ctx, state, psi_prev, new_params, info, t0)

    row_fp = fp if ctx.pair_next_fingerprint else fp_prev
    if not ctx.pair_next_fingerprint and row_fp.iteration != state.iteration - 1:
        raise AssertionError("GP row must pair psi_{n-1} with the fingerprint of pi_{n-1}")
    state.gp_data.add(
        GPInput(to_unit(psi_prev, ctx.psi_mapping.bounds),
                _gp_iteration_input(ctx, row_fp.iteration), row_fp),
        est.value)
    state.gp_iterations.append(row_fp.iteration)
    state.fingerprint = fp

    if ctx.acquisition_fn is not None:
        psi_next = np.asarray(ctx.acquisition_fn(state, ctx), dtype=float)
    else:
        if len(state.gp_data) >= ctx.acquisition.cold_start:
            if state.gp is None:
                state.gp = HellingerProductGP(psi_dim=len(psi_prev), n_restarts=ctx.gp_restarts,
                                              random_state=ctx.rngs["gp"])
            state.gp.fit(state.gp_data.X, state.gp_data.y)
        sel = select_psi(state.gp, fp, _gp_iteration_input(ctx, fp.iteration),
                         ctx.psi_mapping.bounds, ctx.acquisition, ctx.rngs["acquisition"],
                         n_observations=len(state.gp_data))
        psi_next = sel.psi.values
    state.psi_history.append(psi_next)
    return state


def naive_iteration(state, ctx):
    """Policy update with theta drawn from the true prior."""
    t0 = time.perf_counter()
    new_params, info = _sample_and_update(ctx, state, ctx.env.prior.sample)
    _, fp = _finish(ctx, state, ctx.psi_mapping.prior_psi, new_params, info, t0)
    state.fingerprint = fp
    return state


def random_iteration(state, ctx):
    """Train under q_psi with the psi drawn uniformly in its box for the next iteration."""
    t0 = time.perf_counter()
    psi_prev = state.psi_history[-1]
    new_params, info = _sample_and_update(ctx, state, ctx.psi_mapping.sampler(psi_prev))
    _, fp = _finish(ctx, state, psi_prev, new_params, info, t0)
    state.fingerprint = fp
    b = ctx.psi_mapping.bounds
    state.psi_history.append(b[:, 0] + ctx.rngs["acquisition"].random(len(b)) * (b[:, 1] - b[:, 0]))
    return state


def fixed_iteration(state, ctx):
    """Train under q_psi with a constant psi."""
    t0 = time.perf_counter()
    psi = state.psi_history[-1]
    new_params, info = _sample_and_update(ctx, state, ctx.psi_mapping.sampler(psi))
    _, fp = _finish(ctx, state, psi, new_params, info, t0)
    state.fingerprint = fp
    state.psi_history.append(psi.copy())
    return state


def enum_iteration(state, ctx):
    """Probability-weighted sum of per-theta gradients over a discrete support.

    Each sub-batch gets its own baseline and centring, so the assembled gradient
    is exactly ``sum_l p_l g_l`` up to one common positive scale.
    """
    env = ctx.env
    if not env.discrete:
        raise ValueError("Enum requires an environment with discrete theta")
    t0 = time.perf_counter()
    support, probs = env.support, env.probs
    sub_size = max(1, ctx.polgrad.batch_size // len(support))
    trajs, weights, advs = [], [], []
    for theta, p in zip(support, probs):
        if p == 0.0:
            continue  # contributes nothing to the weighted gradient
        sub = collect_batch(env, ctx.policy, state.params, lambda rng, n, th=theta: np.full(n, th),
                            sub_size, ctx.rngs["collection"])
        n_steps = sum(len(t) for t in sub)
        trajs.extend(sub)
        weights.append(np.full(n_steps, p / n_steps))
        advs.append(sub_batch_advantages(ctx, sub))
    weights, adv = np.concatenate(weights), np.concatenate(advs)
    scale = np.sqrt(weights @ adv**2 / weights.sum())
    adv = adv / scale if scale > 1e-8 else np.zeros_like(adv)
    new_params, info = polopt(ctx, state.params, trajs, weights, adv)
    _, fp = _finish(ctx, state, ctx.psi_mapping.prior_psi, new_params, info, t0)
    state.fingerprint = fp
    return state


def epopt_filter(trajectories, epsilon, upper_tail=False):
    """Keep episodes at or beyond the nearest-rank epsilon-quantile of total return.

    By default the lowest returns are kept; ``upper_tail`` keeps the highest ones
    instead (for rare events that carry large positive reward).
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    returns = np.array([t.total_return for t in trajectories])
    k = max(1, math.ceil(epsilon * len(returns)))
    if upper_tail:
        threshold = np.sort(returns)[::-1][k - 1]
        keep = returns >= threshold
    else:
        threshold = np.sort(returns)[k - 1]
        keep = returns <= threshold
    kept = [t for t, flag in zip(trajectories, keep) if flag]
    if not kept:
        kept = [trajectories[int(np.argmax(returns) if upper_tail else np.argmin(returns))]]
    return kept


def epopt_iteration(state, ctx):
    """Naive sampling, then update on the worst epsilon-fraction of episodes."""
    t0 = time.perf_counter()
    trajs = collect_batch(ctx.env, ctx.policy, state.params, ctx.env.prior.sample,
                          ctx.polgrad.batch_size, ctx.rngs["collection"])
    if state.iteration >= ctx.rejection_start_iter:
        trajs = epopt_filter(trajs, ctx.epsilon, ctx.upper_tail)
    new_params, info = polopt(ctx, state.params, trajs)
    _, fp = _finish(ctx, state, ctx.psi_mapping.prior_psi, new_params, info, t0)
    state.fingerprint = fp
    return state


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class PolicySearch(BaseEstimator):
    """Shared ``fit``/``predict`` machinery; subclasses choose the iteration rule."""

    _iteration = staticmethod(naive_iteration)

    def __init__(self, n_iterations=300, polgrad=None, quadrature=None, hidden_sizes=(5, 5),
                 fingerprint="state", random_state=None, verbose=0):
        self.n_iterations = n_iterations
        self.polgrad = polgrad
        self.quadrature = quadrature
        self.hidden_sizes = hidden_sizes
        self.fingerprint = fingerprint
        self.random_state = random_state
        self.verbose = verbose

    def _validate_env(self, env):
        if self.fingerprint not in ("state", "action"):
            raise ValueError(f"fingerprint must be 'state' or 'action', got {self.fingerprint!r}")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")

    def _context(self, env):
        return RunContext(
            env=env,
            policy=GaussianMLPPolicy(env.obs_dim, env.act_dim, self.hidden_sizes),
            polgrad=self.polgrad if self.polgrad is not None else PolGradConfig(),
            quadrature=self.quadrature if self.quadrature is not None else QuadratureConfig(),
            n_iterations=self.n_iterations,
            rngs=make_rngs(self.random_state),
            psi_mapping=psi_mapping_for(env),
            fingerprint=self.fingerprint,
        )

    def _initial_psi(self, ctx):
        return ctx.psi_mapping.prior_psi

    def fit(self, env, callback=None):
        """Train a policy on ``env``; ``callback(record)`` is called after every iteration."""
        self._validate_env(env)
        ctx = self._context(env)
        state = init_state(ctx, self._initial_psi(ctx))
        step = type(self)._iteration
        for _ in range(self.n_iterations):
            state = step(state, ctx)
            rec = state.history[-1]
            if self.verbose and (rec["iteration"] % self.verbose == 0):
                logger.info("%s iter %d J=%.2f psi=%s", type(self).__name__, rec["iteration"],
                            rec["J"], np.round(rec["psi"], 3).tolist())
            if callback is not None:
                callback(rec)
        self.context_ = ctx
        self.state_ = state
        self.policy_ = ctx.policy
        self.params_ = state.params
        self.history_ = state.history
        return self

    def predict(self, obs):
        """Mean action of the learnt policy."""
        check_is_fitted(self, "params_")
        return self.policy_.mean(self.params_, obs)

    def sample_actions(self, obs, rng=None):
        check_is_fitted(self, "params_")
        rng = np.random.default_rng(rng)
        return self.policy_.act(self.params_, obs, rng)

    def score(self, env, random_state=None):
        """Expected return of the learnt policy under ``env``'s prior."""
        check_is_fitted(self, "params_")
        est = estimate_j(env, self.policy_, self.params_, self.context_.quadrature,
                         np.random.default_rng(random_state))
        return est.value


class NaivePG(PolicySearch):
    """Policy gradient with theta sampled from the true prior."""

    _iteration = staticmethod(naive_iteration)


class EnumPG(PolicySearch):
    """Gradient assembled by enumerating every theta of a discrete support."""

    _iteration = staticmethod(enum_iteration)

    def _validate_env(self, env):
        super()._validate_env(env)
        if not env.discrete:
            raise ValueError("EnumPG requires an environment with discrete theta")


class RandomPsiPG(PolicySearch):
    """Sampling-distribution parameters drawn uniformly in their box each iteration."""

    _iteration = staticmethod(random_iteration)

    def _initial_psi(self, ctx):
        b = ctx.psi_mapping.bounds
        return b[:, 0] + ctx.rngs["acquisition"].random(len(b)) * (b[:, 1] - b[:, 0])


class FixedPsiPG(PolicySearch):
    """Sampling-distribution parameters held at ``psi`` for the whole run."""

    _iteration = staticmethod(fixed_iteration)

    def __init__(self, psi=None, n_iterations=300, polgrad=None, quadrature=None,
                 hidden_sizes=(5, 5), fingerprint="state", random_state=None, verbose=0):
        super().__init__(n_iterations, polgrad, quadrature, hidden_sizes, fingerprint,
                         random_state, verbose)
        self.psi = psi

    def _initial_psi(self, ctx):
        psi = ctx.psi_mapping.prior_psi if self.psi is None else np.atleast_1d(self.psi)
        psi = np.asarray(psi, dtype=float)
        b = ctx.psi_mapping.bounds
        if psi.shape != (len(b),) or np.any(psi < b[:, 0]) or np.any(psi > b[:, 1]):
            raise ValueError(f"fixed psi {psi.tolist()} incompatible with bounds {b.tolist()}")
        return psi


class EPOpt(PolicySearch):
    """Update only on the epsilon-tail of episode returns after a warm-up period."""

    _iteration = staticmethod(epopt_iteration)

    def __init__(self, epsilon=0.2, rejection_start_iter=50, upper_tail=False, n_iterations=300,
                 polgrad=None, quadrature=None, hidden_sizes=(5, 5), fingerprint="state",
                 random_state=None, verbose=0):
        super().__init__(n_iterations, polgrad, quadrature, hidden_sizes, fingerprint,
                         random_state, verbose)
        self.epsilon = epsilon
        self.rejection_start_iter = rejection_start_iter
        self.upper_tail = upper_tail

    def _context(self, env):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        ctx = super()._context(env)
        ctx.epsilon = self.epsilon
        ctx.rejection_start_iter = self.rejection_start_iter
        ctx.upper_tail = self.upper_tail
        return ctx


class FPO(PolicySearch):
    """Fingerprint policy optimisation with a GP-UCB choice of the sampling distribution.

    Parameters
    ----------
    fingerprint : {"state", "action"}
        Which diagonal-Gaussian summary of the policy feeds the GP.
    acquisition : AcquisitionConfig, optional
        UCB weight and inner-optimiser budget.
    acquisition_fn : callable, optional
        ``acquisition_fn(state, ctx) -> psi`` replacing GP-UCB entirely (also used
        for the initial psi). Intended for ablations and tests.
    pair_next_fingerprint : bool
        Ablation: pair each J(pi_n) with pi_n's own fingerprint instead of
        pi_{n-1}'s.
    """

    _iteration = staticmethod(fpo_iteration)

    def __init__(self, fingerprint="state", acquisition=None, acquisition_fn=None, gp_restarts=8,
                 pair_next_fingerprint=False, n_iterations=300, polgrad=None, quadrature=None,
                 hidden_sizes=(5, 5), random_state=None, verbose=0):
        super().__init__(n_iterations, polgrad, quadrature, hidden_sizes, fingerprint,
                         random_state, verbose)
        self.acquisition = acquisition
        self.acquisition_fn = acquisition_fn
        self.gp_restarts = gp_restarts
        self.pair_next_fingerprint = pair_next_fingerprint

    def _context(self, env):
        ctx = super()._context(env)
        ctx.acquisition = self.acquisition if self.acquisition is not None else AcquisitionConfig()
        ctx.acquisition_fn = self.acquisition_fn
        ctx.gp_restarts = self.gp_restarts
        ctx.pair_next_fingerprint = self.pair_next_fingerprint
        return ctx

    def _initial_psi(self, ctx):
        if ctx.acquisition_fn is not None:
            return np.asarray(ctx.acquisition_fn(None, ctx), dtype=float)
        b = ctx.psi_mapping.bounds
        return select_psi(None, None, 0.0, b, ctx.acquisition, ctx.rngs["acquisition"]).psi.values

    @property
    def gp_(self):
        check_is_fitted(self, "state_")
        return self.state_.gp


METHODS = {
    "fpo": FPO,
    "naive": NaivePG,
    "enum": EnumPG,
    "random": RandomPsiPG,
    "fixed": FixedPsiPG,
    "epopt": EPOpt,
}

__all__ = [
    "FPO", "NaivePG", "EnumPG", "RandomPsiPG", "FixedPsiPG", "EPOpt", "FpoState", "RunContext",
    "fpo_iteration", "naive_iteration", "enum_iteration", "random_iteration", "fixed_iteration",
    "epopt_iteration", "epopt_filter", "BetaPsi", "BernoulliPsi",
]
