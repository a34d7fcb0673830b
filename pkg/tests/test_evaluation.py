import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpo.envs import CliffWalker, CliffWalkerConfig, ToyVelocity, ToyVelocityConfig, beta_prior
from fpo.evaluation import (QuadratureConfig, adaptive_gk15, estimate_j, expected_return_at_theta,
                            gk15, j_exhaustive, j_quadrature, quadrature_expectation)
from fpo.policy import GaussianMLPPolicy


def constant_action_params(policy, action, log_std=-10.0):
    """Zero network with the output bias set: the policy always emits ``action``."""
    params = np.zeros(policy.n_params)
    params[policy.n_net_params - policy.act_dim:policy.n_net_params] = action
    params[policy.log_std_slice] = log_std
    return params


class TestGK15:
    def test_linear(self):
        est, _ = gk15(lambda x: 2 * x, 0.0, 1.0)
        assert est == pytest.approx(1.0, abs=1e-14)

    def test_beta_mean(self):
        est, _ = gk15(lambda x: x * 2 * x, 0.0, 1.0)
        assert est == pytest.approx(2 / 3, abs=1e-14)

    @pytest.mark.parametrize("degree", range(23))
    def test_polynomial_exactness(self, degree):
        est, _ = gk15(lambda x: x**degree, 0.0, 1.0)
        assert abs(est - 1 / (degree + 1)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(coeffs=st.lists(st.floats(-5, 5), min_size=1, max_size=23))
    def test_random_polynomials(self, coeffs):
        exact = sum(c / (k + 1) for k, c in enumerate(coeffs))
        est, _ = gk15(lambda x: np.polyval(coeffs[::-1], x), 0.0, 1.0)
        assert abs(est - exact) < 1e-12 * max(1.0, sum(abs(c) for c in coeffs))

    def test_cos_error_bound(self):
        est, err = gk15(lambda x: np.cos(10 * x), 0.0, 1.0)
        true_err = abs(est - np.sin(10) / 10)
        assert true_err < 1e-8
        assert err >= true_err

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            gk15(lambda x: np.where(x > 0.5, np.inf, 0.0), 0.0, 1.0)

    def test_reversed_interval(self):
        with pytest.raises(ValueError):
            gk15(lambda x: x, 1.0, 0.0)

    def test_weights_sum_to_two(self):
        est, _ = gk15(np.ones_like, -1.0, 1.0)
        assert est == pytest.approx(2.0, abs=1e-15)


class TestAdaptive:
    prior = beta_prior(2, 1)

    def test_constant(self):
        res = quadrature_expectation(lambda th: np.full_like(th, 7.5), self.prior.pdf, (0, 1),
                                     QuadratureConfig())
        assert res.estimate == pytest.approx(7.5, abs=1e-6)

    def test_identity_gives_beta_mean(self):
        res = quadrature_expectation(lambda th: th, self.prior.pdf, (0, 1), QuadratureConfig())
        assert res.estimate == pytest.approx(2 / 3, abs=1e-6)

    def test_step_function(self):
        cfg = QuadratureConfig()
        res = quadrature_expectation(lambda th: np.where(th < 0.3, -5000.0, 1.0),
                                     self.prior.pdf, (0, 1), cfg)
        assert res.estimate == pytest.approx(-449.09, rel=cfg.rel_tol)

    def test_step_function_converges_with_budget(self):
        res = adaptive_gk15(lambda th: self.prior.pdf(th) * np.where(th < 0.3, -5000.0, 1.0),
                            0.0, 1.0, rel_tol=1e-8, abs_tol=1e-8, max_subdivisions=200)
        assert res.estimate == pytest.approx(-449.09, rel=1e-6)

    def test_unconverged_flag(self):
        res = adaptive_gk15(lambda th: np.where(th < 0.3, -5000.0, 1.0), 0.0, 1.0,
                            rel_tol=1e-12, abs_tol=1e-12, max_subdivisions=2)
        assert not res.converged
        assert len(res.intervals) == 3

    def test_bisects_worst_interval(self):
        res = adaptive_gk15(lambda th: np.where(th < 0.3, -5000.0, 1.0), 0.0, 1.0,
                            rel_tol=1e-12, abs_tol=1e-12, max_subdivisions=6)
        # every split chases the discontinuity
        widths = [hi - lo for lo, hi in res.intervals if lo <= 0.3 <= hi]
        assert min(widths) == pytest.approx(2.0**-6)

    def test_intervals_partition(self):
        res = adaptive_gk15(np.sin, 0.0, 3.0, rel_tol=1e-14, abs_tol=1e-14, max_subdivisions=5)
        assert res.intervals[0][0] == 0.0 and res.intervals[-1][1] == 3.0
        for (_, hi), (lo, _) in zip(res.intervals, res.intervals[1:]):
            assert hi == lo


class TestExpectedReturn:
    def test_near_deterministic_m_invariance(self):
        env = CliffWalker(CliffWalkerConfig(noise_scale=0.0, init_scale=0.0, horizon=50))
        pol = GaussianMLPPolicy(1, 1)
        params = constant_action_params(pol, 1.0)
        r1 = expected_return_at_theta(env, pol, params, 0.5, 1, np.random.default_rng(1))
        r10 = expected_return_at_theta(env, pol, params, 0.5, 10, np.random.default_rng(2))
        assert r1 == pytest.approx(r10, abs=1e-3)

    def test_walk_left_negative(self):
        env = CliffWalker(CliffWalkerConfig(init_scale=0.0, horizon=100))
        pol = GaussianMLPPolicy(1, 1)
        params = constant_action_params(pol, -1.0)
        assert expected_return_at_theta(env, pol, params, 0.5, 4, np.random.default_rng(0)) < 0

    def test_toy_at_target(self):
        class StartAtTarget(ToyVelocity):
            def initial_states(self, u):
                return np.tile([0.0, self.config.target_low], (np.asarray(u).shape[0], 1))

        env = StartAtTarget(ToyVelocityConfig())
        pol = GaussianMLPPolicy(2, 1)
        params = constant_action_params(pol, 0.0)
        ret = expected_return_at_theta(env, pol, params, 0.0, 3, np.random.default_rng(0))
        # a zero action holds the velocity at the target up to the residual policy noise
        assert ret == pytest.approx(0.0, abs=1e-2)

    def test_invalid_m(self):
        env = CliffWalker()
        pol = GaussianMLPPolicy(1, 1)
        with pytest.raises(ValueError):
            expected_return_at_theta(env, pol, np.zeros(pol.n_params), 0.5, 0, np.random.default_rng())


class TestExhaustive:
    """Per-theta returns are forced through a fake environment with a theta-valued reward."""

    class ThetaRewardEnv(ToyVelocity):
        def step(self, states, actions, thetas, eps):
            nxt, _, _ = super().step(states, actions, np.zeros_like(thetas), eps)
            return nxt, np.asarray(thetas, dtype=float) / self.horizon, np.zeros(len(states), bool)

    def setup_method(self):
        self.env = self.ThetaRewardEnv(ToyVelocityConfig(horizon=10))
        self.pol = GaussianMLPPolicy(2, 1)
        self.params = self.pol.init_params(np.random.default_rng(0))

    def j(self, support, probs, m=2):
        return j_exhaustive(self.env, self.pol, self.params, support, probs, m,
                            np.random.default_rng(0)).value

    def test_forced_returns(self):
        assert self.j([100.0, 2000.0], [0.98, 0.02]) == pytest.approx(138.0)

    def test_single_point(self):
        single = self.j([42.0], [1.0])
        direct = expected_return_at_theta(self.env, self.pol, self.params, 42.0, 2,
                                          np.random.default_rng(0))
        assert single == pytest.approx(direct)

    def test_permutation(self):
        assert self.j([1.0, 5.0, 9.0], [0.2, 0.5, 0.3]) == pytest.approx(
            self.j([9.0, 1.0, 5.0], [0.3, 0.2, 0.5]))

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(-100, 100), b=st.floats(-100, 100), p=st.floats(0, 1))
    def test_linearity(self, a, b, p):
        probs = [p, 1 - p]
        lhs = self.j([2 * a, 2 * b], probs)
        rhs = 2 * self.j([a, b], probs)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_errors(self):
        with pytest.raises(ValueError):
            self.j([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            self.j([1.0, 2.0], [0.5, 0.6])


class TestJQuadrature:
    def test_common_random_numbers_make_integrand_deterministic(self):
        env = CliffWalker(CliffWalkerConfig(horizon=60))
        pol = GaussianMLPPolicy(1, 1)
        params = pol.init_params(np.random.default_rng(0))
        a = j_quadrature(env, pol, params, env.prior.pdf, (0, 1), QuadratureConfig(),
                         np.random.default_rng(5))
        b = j_quadrature(env, pol, params, env.prior.pdf, (0, 1), QuadratureConfig(),
                         np.random.default_rng(5))
        assert a.value == b.value
        assert a.trajectories

    def test_safe_policy_matches_return(self):
        # a policy that stays near the start never falls, so J does not depend on theta
        env = CliffWalker(CliffWalkerConfig(horizon=40, noise_scale=0.0, init_scale=0.0))
        pol = GaussianMLPPolicy(1, 1)
        params = constant_action_params(pol, 1.0)
        est = estimate_j(env, pol, params, QuadratureConfig(), np.random.default_rng(0))
        expected = sum(0.025 * k for k in range(1, 41))
        assert est.value == pytest.approx(expected, abs=1e-6)
        assert est.converged

    def test_dispatch_discrete(self):
        env = ToyVelocity(ToyVelocityConfig(horizon=10))
        pol = GaussianMLPPolicy(2, 1)
        params = pol.init_params(np.random.default_rng(0))
        est = estimate_j(env, pol, params, QuadratureConfig(trajs_per_theta=3),
                         np.random.default_rng(0))
        assert len(est.trajectories) == 3 * len(env.support)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            QuadratureConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            QuadratureConfig(trajs_per_node=0)
