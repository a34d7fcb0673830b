"""Batch collection and a KL-constrained natural-gradient (TRPO-style) update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .policy import gaussian_kl

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    theta: float
    terminals: np.ndarray

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.observations) == len(self.actions) == len(self.terminals) == n):
            raise ValueError("trajectory fields must have equal lengths")

    def __len__(self):
        return len(self.rewards)

    @property
    def total_return(self):
        return float(np.sum(self.rewards))


@dataclass(frozen=True)
class PolGradConfig:
    gamma: float = 0.99
    gae_lambda: float = 1.0
    kl_limit: float = 0.01
    batch_size: int = 2000
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10
    baseline_ridge: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.kl_limit <= 0:
            raise ValueError("kl_limit must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass
class RolloutNoise:
    """Pre-drawn randomness for ``n`` lockstep episodes."""

    init: np.ndarray  # (n, state_dim) uniforms
    env: np.ndarray  # (T, n, noise_dim) standard normals
    action: np.ndarray  # (T, n, act_dim) standard normals

    @classmethod
    def draw(cls, env, n, rng):
        T = env.horizon
        return cls(
            init=rng.random((n, env.state_dim)),
            env=rng.standard_normal((T, n, env.noise_dim)),
            action=rng.standard_normal((T, n, env.act_dim)),
        )

    def tile(self, reps):
        """Repeat the episodes ``reps`` times (block-wise), for common random numbers."""
        return RolloutNoise(
            init=np.tile(self.init, (reps, 1)),
            env=np.tile(self.env, (1, reps, 1)),
            action=np.tile(self.action, (1, reps, 1)),
        )


def rollout(env, policy, params, thetas, noise):
    """Run one episode per entry of ``thetas`` in lockstep.

    Episodes end at a terminal step or at the horizon. Returns a list of
    :class:`Trajectory` in the order of ``thetas``.
    """
    thetas = np.asarray(thetas, dtype=float)
    n = len(thetas)
    T = env.horizon
    states = env.initial_states(noise.init)
    std = policy.std(params)
    obs_buf = np.empty((T, n, env.obs_dim))
    act_buf = np.empty((T, n, env.act_dim))
    rew_buf = np.empty((T, n))
    term_buf = np.zeros((T, n), dtype=bool)
    alive = np.ones(n, dtype=bool)
    lengths = np.zeros(n, dtype=int)
    for t in range(T):
        obs = env.observe(states)
        actions = policy.mean(params, obs) + std * noise.action[t]
        nxt, rewards, terminal = env.step(states, actions, thetas, noise.env[t])
        obs_buf[t] = obs
        act_buf[t] = actions
        rew_buf[t] = rewards
        term_buf[t] = terminal
        lengths += alive
        alive &= ~terminal
        if not alive.any():
            break
        states = nxt
    return [
        Trajectory(
            observations=obs_buf[: lengths[i], i].copy(),
            actions=act_buf[: lengths[i], i].copy(),
            rewards=rew_buf[: lengths[i], i].copy(),
            theta=float(thetas[i]),
            terminals=term_buf[: lengths[i], i].copy(),
        )
        for i in range(n)
    ]


def collect_batch(env, policy, params, sample_theta, batch_size, rng):
    """Roll out episodes with ``theta ~ sample_theta(rng, n)`` until ``batch_size`` steps.

    Episodes are simulated in lockstep chunks; surplus episodes of the last chunk
    are discarded so the result only depends on the stopping rule.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    trajectories = []
    total = 0
    while total < batch_size:
        n = max(1, int(np.ceil((batch_size - total) / env.horizon)))
        thetas = np.asarray(sample_theta(rng, n), dtype=float).reshape(n)
        noise = RolloutNoise.draw(env, n, rng)
        for tr in rollout(env, policy, params, thetas, noise):
            trajectories.append(tr)
            total += len(tr)
            if total >= batch_size:
                break
    return trajectories


# ---------------------------------------------------------------------------
# Batches, returns, baseline
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Trajectories flattened into step-aligned arrays."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    thetas: np.ndarray
    timesteps: np.ndarray
    traj_index: np.ndarray
    horizon: int
    trajectories: list = field(repr=False, default_factory=list)
    weights: np.ndarray = None

    def __post_init__(self):
        if self.weights is None:
            n = len(self.rewards)
            self.weights = np.full(n, 1.0 / n) if n else np.zeros(0)

    @classmethod
    def from_trajectories(cls, trajectories, horizon):
        if not trajectories:
            raise ValueError("empty batch")
        return cls(
            observations=np.concatenate([t.observations for t in trajectories]),
            actions=np.concatenate([t.actions for t in trajectories]),
            rewards=np.concatenate([t.rewards for t in trajectories]),
            thetas=np.concatenate([np.full(len(t), t.theta) for t in trajectories]),
            timesteps=np.concatenate([np.arange(len(t)) for t in trajectories]),
            traj_index=np.concatenate([np.full(len(t), i) for i, t in enumerate(trajectories)]),
            horizon=int(horizon),
            trajectories=list(trajectories),
        )

    def __len__(self):
        return len(self.rewards)


def discounted_returns(rewards, gamma):
    out = np.empty(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def batch_returns(batch, gamma):
    return np.concatenate([discounted_returns(t.rewards, gamma) for t in batch.trajectories])


class LinearValueBaseline:
    """Ridge regression of returns on ``(obs, obs^2, theta, t/H, (t/H)^2, 1)``.

    ``theta`` is visible to the baseline during training even though the policy
    never observes it. The intercept is not penalised.
    """

    def __init__(self, ridge=1e-8):
        self.ridge = ridge
        self.coef_ = None

    @staticmethod
    def features(observations, thetas, timesteps, horizon):
        obs = np.asarray(observations, dtype=float)
        tf = np.asarray(timesteps, dtype=float)[:, None] / horizon
        return np.hstack([obs, obs**2, np.asarray(thetas, dtype=float)[:, None], tf, tf**2,
                          np.ones((len(obs), 1))])

    def fit(self, batch, returns):
        X = self.features(batch.observations, batch.thetas, batch.timesteps, batch.horizon)
        penalty = np.full(X.shape[1], self.ridge)
        penalty[-1] = 0.0
        A = X.T @ X + np.diag(penalty)
        self.coef_ = np.linalg.solve(A, X.T @ np.asarray(returns, dtype=float))
        return self

    def predict(self, batch):
        X = self.features(batch.observations, batch.thetas, batch.timesteps, batch.horizon)
        if self.coef_ is None:
            return np.zeros(len(X))
        return X @ self.coef_


def fit_baseline(batch, gamma=0.99, ridge=1e-8):
    return LinearValueBaseline(ridge).fit(batch, batch_returns(batch, gamma))


def gae_advantages(batch, values, gamma, lam):
    """Generalised advantage estimate per trajectory; no bootstrap past the last step."""
    out = np.empty(len(batch))
    start = 0
    for tr in batch.trajectories:
        end = start + len(tr)
        r = tr.rewards
        v = values[start:end]
        v_next = np.append(v[1:], 0.0)
        deltas = r + gamma * v_next - v
        out[start:end] = discounted_returns(deltas, gamma * lam)
        start = end
    return out


def compute_advantages(batch, baseline, config, normalize=True):
    """Return ``(advantages, returns)`` for every step of ``batch``."""
    returns = batch_returns(batch, config.gamma)
    values = baseline.predict(batch) if baseline is not None else np.zeros(len(batch))
    if config.gae_lambda == 1.0:
        adv = returns - values
    else:
        adv = gae_advantages(batch, values, config.gamma, config.gae_lambda)
    if normalize:
        adv = normalize_advantages(adv)
    return adv, returns


def normalize_advantages(adv):
    std = adv.std()
    centred = adv - adv.mean()
    if std < 1e-8:
        return np.zeros_like(adv)
    return centred / std


# ---------------------------------------------------------------------------
# Gradient, Fisher-vector product, trust-region step
# ---------------------------------------------------------------------------


def policy_gradient(policy, params, batch, advantages):
    """Weighted score-function gradient ``sum_t w_t grad log pi(a_t|s_t) A_t``.

    With the default uniform weights this is the batch average.
    """
    grads = policy.grad_log_prob(params, batch.observations, batch.actions)
    return grads.T @ (batch.weights * advantages)


def fisher_vector_product(policy, params, batch, v, damping=0.0):
    """``F v + damping v`` with ``F`` the Hessian of the mean KL, computed matrix-free."""
    v = np.asarray(v, dtype=float)
    k = policy.n_net_params
    inv_var = np.exp(-2.0 * params[policy.log_std_slice])
    jv = policy.jvp_mean(params, batch.observations, v[:k])
    out = np.empty_like(v)
    out[:k] = policy.vjp_mean(params, batch.observations, batch.weights[:, None] * jv * inv_var)
    out[k:] = 2.0 * v[k:] * batch.weights.sum()
    return out + damping * v


def mean_kl(policy, old_params, new_params, observations, weights=None):
    mu_old = policy.mean(old_params, observations)
    mu_new = policy.mean(new_params, observations)
    kl = gaussian_kl(mu_old, old_params[policy.log_std_slice], mu_new, new_params[policy.log_std_slice])
    if weights is None:
        return float(kl.mean())
    return float(kl @ weights / weights.sum())


def conjugate_gradient(matvec, b, iters=10, residual_tol=1e-10):
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr < residual_tol:
            break
        Ap = matvec(p)
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass
class UpdateInfo:
    accepted: bool
    kl: float
    improvement: float
    step_fraction: float
    cg_residual: float


def trust_region_step(x0, g, fvp, kl_fn, surrogate_fn, kl_limit, cg_iters=10,
                      backtrack_ratio=0.5, max_backtracks=10):
    """Natural-gradient ascent step with a KL line search.

    ``fvp`` must already include damping. Returns ``(x_new, info)``; on failure
    ``x_new is x0``.
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite policy gradient")
    if not np.any(g):
        return x0, UpdateInfo(False, 0.0, 0.0, 0.0, 0.0)
    direction = conjugate_gradient(fvp, g, iters=cg_iters)
    Fd = fvp(direction)
    shs = direction @ Fd
    residual = float(np.linalg.norm(Fd - g) / np.linalg.norm(g))
    if not np.isfinite(shs) or shs <= 0:
        return x0, UpdateInfo(False, 0.0, 0.0, 0.0, residual)
    full_step = np.sqrt(2.0 * kl_limit / shs) * direction
    surr0 = surrogate_fn(x0)
    frac = 1.0
    for _ in range(max_backtracks + 1):
        x_new = x0 + frac * full_step
        kl = kl_fn(x_new)
        improvement = surrogate_fn(x_new) - surr0
        if kl <= kl_limit * (1.0 + 1e-6) and improvement >= 0:
            return x_new, UpdateInfo(True, float(kl), float(improvement), frac, residual)
        frac *= backtrack_ratio
    logger.debug("line search failed; keeping parameters")
    return x0, UpdateInfo(False, 0.0, 0.0, 0.0, residual)


def surrogate(policy, old_params, new_params, batch, advantages):
    logp_old = policy.log_prob(old_params, batch.observations, batch.actions)
    logp_new = policy.log_prob(new_params, batch.observations, batch.actions)
    return float(np.exp(logp_new - logp_old) @ (batch.weights * advantages))


def kl_constrained_update(policy, params, g, batch, advantages, config):
    """Solve ``F x = g`` by CG, scale to the KL limit and backtrack.

    Returns ``(new_params, info)``; a failed line search leaves ``params``
    unchanged and sets ``info.accepted = False``.
    """
    def fvp(v):
        return fisher_vector_product(policy, params, batch, v, config.cg_damping)

    def kl_fn(x):
        return mean_kl(policy, params, policy.clip_log_std(x), batch.observations, batch.weights)

    def surr_fn(x):
        return surrogate(policy, params, policy.clip_log_std(x), batch, advantages)

    new, info = trust_region_step(params, g, fvp, kl_fn, surr_fn, config.kl_limit,
                                  cg_iters=config.cg_iters, backtrack_ratio=config.backtrack_ratio,
                                  max_backtracks=config.max_backtracks)
    return policy.clip_log_std(new), info
