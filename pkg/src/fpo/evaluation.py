"""Estimate the expected return J(pi) under the true prior over theta.

Discrete theta is handled by exhaustive summation over the support. Continuous
theta uses adaptive 15-point Gauss-Kronrod quadrature of
``prior_pdf(theta) * R(theta, pi)``. Rollout noise is fixed for the duration of a
single J evaluation (common random numbers), so ``R`` is a deterministic function
of ``theta`` while the quadrature runs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .polgrad import RolloutNoise, rollout

# Kronrod abscissae on [0, 1) (positive half, descending) and weights; the
# 7-point Gauss rule uses every second node.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# Reference nodes on [-1, 1]: -x_0 .. -x_6, 0, x_6 .. x_0
GK_NODES = np.concatenate([-_XGK[:7], [0.0], _XGK[6::-1]])
K15_WEIGHTS = np.concatenate([_WGK[:7], [_WGK[7]], _WGK[6::-1]])
G7_WEIGHTS = np.zeros(15)
G7_WEIGHTS[[1, 3, 5]] = _WG[:3]
G7_WEIGHTS[7] = _WG[3]
G7_WEIGHTS[[9, 11, 13]] = _WG[2::-1]


def gk_nodes(a, b):
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * GK_NODES


def _gk_combine(fvals, a, b):
    fvals = np.asarray(fvals, dtype=float)
    if not np.all(np.isfinite(fvals)):
        raise FloatingPointError("integrand returned a non-finite value")
    half = 0.5 * (b - a)
    k15 = half * (K15_WEIGHTS @ fvals)
    g7 = half * (G7_WEIGHTS @ fvals)
    return k15, abs(k15 - g7)


def gk15(integrand, a, b):
    """15-point Kronrod estimate of the integral and ``|K15 - G7|``.

    ``integrand`` must accept a numpy array of nodes.
    """
    if not a < b:
        raise ValueError("gk15 requires a < b")
    return _gk_combine(integrand(gk_nodes(a, b)), a, b)


@dataclass
class QuadResult:
    estimate: float
    error: float
    converged: bool
    n_evals: int
    intervals: list = field(default_factory=list)


def adaptive_gk15(integrand, a, b, rel_tol=1e-2, abs_tol=1.0, max_subdivisions=10):
    """Globally adaptive GK15: repeatedly bisect the subinterval with the largest error.

    Both halves of a bisection are evaluated in one vectorised integrand call.
    """
    est, err = gk15(integrand, a, b)
    heap = [(-err, a, b, est)]
    total, total_err = est, err
    n_evals = 15
    subdivisions = 0
    while total_err >= max(abs_tol, rel_tol * abs(total)) and subdivisions < max_subdivisions:
        neg_err, lo, hi, e = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        vals = integrand(np.concatenate([gk_nodes(lo, mid), gk_nodes(mid, hi)]))
        left = _gk_combine(vals[:15], lo, mid)
        right = _gk_combine(vals[15:], mid, hi)
        heapq.heappush(heap, (-left[1], lo, mid, left[0]))
        heapq.heappush(heap, (-right[1], mid, hi, right[0]))
        total += left[0] + right[0] - e
        total_err += left[1] + right[1] + neg_err
        n_evals += 30
        subdivisions += 1
    # re-sum to avoid drift from incremental updates
    total = float(sum(item[3] for item in heap))
    total_err = float(sum(-item[0] for item in heap))
    converged = total_err < max(abs_tol, rel_tol * abs(total))
    intervals = sorted((lo, hi) for _, lo, hi, _ in heap)
    return QuadResult(total, total_err, converged, n_evals, intervals)


# ---------------------------------------------------------------------------
# Policy returns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-2
    abs_tol: float = 1.0
    max_subdivisions: int = 10
    trajs_per_node: int = 4
    trajs_per_theta: int = 8

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.trajs_per_node < 1 or self.trajs_per_theta < 1:
            raise ValueError("trajectory counts must be >= 1")


@dataclass
class JEstimate:
    value: float
    error: float = 0.0
    converged: bool = True
    trajectories: list = field(default_factory=list, repr=False)


class _ReturnOracle:
    """``theta -> mean undiscounted return`` with noise frozen at construction."""

    def __init__(self, env, policy, params, m, rng):
        self.env, self.policy, self.params, self.m = env, policy, params, m
        self.noise = RolloutNoise.draw(env, m, rng)
        self.trajectories = []

    def __call__(self, thetas):
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        reps = np.repeat(thetas, self.m)
        # episode i*m + j uses noise row j
        trajs = rollout(self.env, self.policy, self.params, reps, self.noise.tile(len(thetas)))
        self.trajectories.extend(trajs)
        totals = np.array([t.total_return for t in trajs]).reshape(len(thetas), self.m)
        return totals.mean(axis=1)


def expected_return_at_theta(env, policy, params, theta, m, rng):
    """Mean undiscounted return of ``m`` rollouts at a fixed theta."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return float(_ReturnOracle(env, policy, params, m, rng)([float(theta)])[0])


def j_exhaustive(env, policy, params, support, probs, m, rng):
    """``sum_l p_l R(theta_l)`` with ``R`` averaged over ``m`` rollouts per support point."""
    support = np.asarray(support, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if support.shape != probs.shape:
        raise ValueError("support and probs have different lengths")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probs must sum to 1")
    oracle = _ReturnOracle(env, policy, params, m, rng)
    returns = oracle(support)
    return JEstimate(float(probs @ returns), trajectories=oracle.trajectories)


def quadrature_expectation(return_fn, prior_pdf, interval, config):
    """Adaptive GK15 of ``prior_pdf(theta) * return_fn(theta)`` over ``interval``."""
    a, b = interval
    return adaptive_gk15(lambda th: prior_pdf(th) * return_fn(th), a, b,
                         rel_tol=config.rel_tol, abs_tol=config.abs_tol,
                         max_subdivisions=config.max_subdivisions)


def j_quadrature(env, policy, params, prior_pdf, interval, config, rng):
    """Expected return under a continuous prior by adaptive Gauss-Kronrod quadrature."""
    oracle = _ReturnOracle(env, policy, params, config.trajs_per_node, rng)
    res = quadrature_expectation(oracle, prior_pdf, interval, config)
    return JEstimate(res.estimate, res.error, res.converged, oracle.trajectories)


def estimate_j(env, policy, params, config, rng):
    """Dispatch to exhaustive summation or quadrature depending on the environment."""
    if env.discrete:
        return j_exhaustive(env, policy, params, env.support, env.probs, config.trajs_per_theta, rng)
    return j_quadrature(env, policy, params, env.prior.pdf, env.theta_interval, config, rng)
