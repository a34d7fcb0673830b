"""Episodic environments driven by a hidden environment variable ``theta``.

Two environments are provided:

* :class:`CliffWalker` - a 1-D continuous walker rewarded by its position, with a
  cliff at ``cliff_base + theta``. ``theta`` follows a Beta prior, so nearby
  cliffs are rare but falling costs ``fall_reward``.
* :class:`ToyVelocity` - a point mass that must track a target velocity. With
  small probability ``theta = 1`` and the target switches to a high velocity
  carrying a large bonus.

Every environment exposes the same vectorised interface, used by the rollout
code: ``initial_states(u)``, ``observe(states)`` and
``step(states, actions, thetas, eps)``. Noise is always passed in explicitly so
rollouts can share random numbers across ``theta`` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Theta:
    value: float

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    terminal: bool


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


class BetaPrior:
    """Beta(a, b) distribution on [0, 1] with a pdf and a sampler."""

    def __init__(self, a=2.0, b=1.0):
        if a <= 0 or b <= 0:
            raise ValueError(f"Beta parameters must be positive, got a={a}, b={b}")
        self.a = float(a)
        self.b = float(b)

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any((theta < 0) | (theta > 1)):
            raise ValueError("theta outside [0, 1]")
        return stats.beta.pdf(theta, self.a, self.b)

    def cdf(self, theta):
        return stats.beta.cdf(theta, self.a, self.b)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    def __repr__(self):
        return f"BetaPrior(a={self.a:g}, b={self.b:g})"


def beta_prior(a=2.0, b=1.0):
    return BetaPrior(a, b)


class DiscretePrior:
    """Finite-support distribution over theta values."""

    def __init__(self, support, probs):
        support = np.asarray(support, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if support.shape != probs.shape or support.ndim != 1:
            raise ValueError("support and probs must be 1-D arrays of equal length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        self.support = support
        self.probs = probs

    def sample(self, rng, size=None):
        idx = rng.choice(len(self.support), size=size, p=self.probs)
        return self.support[idx]

    @property
    def mean(self):
        return float(self.support @ self.probs)

    def __repr__(self):
        return f"DiscretePrior(support={self.support.tolist()}, probs={self.probs.tolist()})"


# ---------------------------------------------------------------------------
# Cliff walker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CliffWalkerConfig:
    step_size: float = 0.025
    noise_scale: float = 0.005
    cliff_base: float = 1.0
    fall_reward: float = -5000.0
    horizon: int = 500
    init_scale: float = 0.05

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.fall_reward > 0:
            raise ValueError("fall_reward must be <= 0")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


def _sign(x):
    # sign(0) := +1
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def cliff_reset(config, rng):
    """Draw a start state uniformly on [-init_scale, init_scale]."""
    if config.init_scale == 0:
        return 0.0
    return float(config.init_scale * (2.0 * rng.random() - 1.0))


def cliff_step(state, action, theta, config, rng=None, eps=None):
    """Advance the cliff walker by one step.

    ``eps`` overrides the standard-normal transition noise; otherwise it is drawn
    from ``rng``.
    """
    theta = float(theta)
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"cliff walker theta must lie in [0, 1], got {theta}")
    if eps is None:
        eps = rng.standard_normal()
    action = float(np.ravel(action)[0])
    next_state = float(state) + config.step_size * float(_sign(action)) + config.noise_scale * eps
    if next_state < config.cliff_base + theta:
        return StepResult(np.array([next_state]), next_state, False)
    return StepResult(np.array([next_state]), config.fall_reward, True)


class CliffWalker:
    """Vectorised cliff walker with prior ``Beta(2, 1)`` over the cliff offset."""

    obs_dim = 1
    act_dim = 1
    state_dim = 1
    noise_dim = 1
    discrete = False
    name = "cliff_walker"

    def __init__(self, config=None, prior=None):
        self.config = config if config is not None else CliffWalkerConfig()
        self.prior = prior if prior is not None else BetaPrior(2.0, 1.0)
        self.theta_interval = (0.0, 1.0)

    @property
    def horizon(self):
        return self.config.horizon

    def initial_states(self, u):
        """Map uniform draws of shape (n, 1) to start states."""
        return self.config.init_scale * (2.0 * np.asarray(u) - 1.0)

    def observe(self, states):
        return states

    def step(self, states, actions, thetas, eps):
        c = self.config
        nxt = states[:, 0] + c.step_size * _sign(actions[:, 0]) + c.noise_scale * eps[:, 0]
        fell = nxt >= c.cliff_base + thetas
        rewards = np.where(fell, c.fall_reward, nxt)
        return nxt[:, None], rewards, fell


# ---------------------------------------------------------------------------
# Toy target-velocity environment (discrete theta)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyVelocityConfig:
    target_low: float = 2.0
    target_high: float = 4.0
    p_high: float = 0.02
    bonus: float = 200.0
    horizon: int = 100
    accel: float = 0.1
    max_velocity: float = 6.0
    dt: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.p_high <= 1.0:
            raise ValueError("p_high must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _toy_reward(velocity, theta, config):
    target = np.where(theta >= 0.5, config.target_high, config.target_low)
    reward = -np.abs(velocity - target)
    bonus = config.bonus * np.exp(-((velocity - config.target_high) ** 2))
    return reward + np.where(theta >= 0.5, bonus, 0.0)


def toy_step(state, action, theta, config, rng=None):
    """One step of the target-velocity toy. ``state`` is (position, velocity)."""
    theta = float(theta)
    if theta not in (0.0, 1.0):
        raise ValueError(f"toy theta must be 0 or 1, got {theta}")
    position, velocity = float(state[0]), float(state[1])
    action = float(np.ravel(action)[0])
    velocity = float(np.clip(velocity + config.accel * np.tanh(action), 0.0, config.max_velocity))
    position = position + config.dt * velocity
    reward = float(_toy_reward(velocity, theta, config))
    return StepResult(np.array([position, velocity]), reward, False)


class ToyVelocity:
    """Vectorised point mass with a rare high-velocity bonus regime."""

    obs_dim = 2
    act_dim = 1
    state_dim = 2
    noise_dim = 0
    discrete = True
    name = "toy_velocity"

    def __init__(self, config=None):
        self.config = config if config is not None else ToyVelocityConfig()
        p = self.config.p_high
        self.prior = DiscretePrior([0.0, 1.0], [1.0 - p, p])

    @property
    def horizon(self):
        return self.config.horizon

    @property
    def support(self):
        return self.prior.support

    @property
    def probs(self):
        return self.prior.probs

    def initial_states(self, u):
        return np.zeros((np.asarray(u).shape[0], 2))

    def observe(self, states):
        # theta never enters the observation
        return states

    def step(self, states, actions, thetas, eps):
        c = self.config
        vel = np.clip(states[:, 1] + c.accel * np.tanh(actions[:, 0]), 0.0, c.max_velocity)
        pos = states[:, 0] + c.dt * vel
        rewards = _toy_reward(vel, thetas, c)
        return np.column_stack([pos, vel]), rewards, np.zeros(len(vel), dtype=bool)


ENVIRONMENTS = {
    "cliff_walker": (CliffWalker, CliffWalkerConfig),
    "toy_velocity": (ToyVelocity, ToyVelocityConfig),
}


def make_env(name, **params):
    """Build an environment by name from keyword config overrides."""
    try:
        env_cls, cfg_cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return env_cls(cfg_cls(**params))
