import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpo.acquisition import (AcquisitionConfig, PsiPoint, from_unit, gp_rows, select_psi,
                             to_unit, ucb)
from fpo.gp import GPHypers, HellingerProductGP
from fpo.policy import Fingerprint

FP = Fingerprint([0.2], [0.5], 3)


class QuadraticModel:
    """Stand-in regressor: known mean, constant std."""

    def __init__(self, centre, sd=0.0, n_obs=10):
        self.centre = np.asarray(centre, dtype=float)
        self.sd = sd
        self.X_train_ = np.zeros((n_obs, 1))

    def predict(self, X, return_std=False):
        d = len(self.centre)
        mu = -np.sum((X[:, :d] - self.centre) ** 2, axis=1)
        return (mu, np.full(len(X), self.sd)) if return_std else mu


class TestUcb:
    def test_arithmetic(self):
        assert ucb(1.0, 0.5, 2.0) == pytest.approx(2.0)
        np.testing.assert_allclose(ucb(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 3.0), [3.0, 1.0])

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            ucb(0.0, -1.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(mu=st.floats(-1e3, 1e3), sigma=st.floats(0, 1e3), k1=st.floats(0, 10), k2=st.floats(0, 10))
    def test_monotone_in_kappa(self, mu, sigma, k1, k2):
        lo, hi = sorted((k1, k2))
        assert ucb(mu, sigma, lo) <= ucb(mu, sigma, hi) + 1e-9

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            AcquisitionConfig(kappa=-1.0)
        with pytest.raises(ValueError):
            AcquisitionConfig(n_candidates=0)


class TestUnitBox:
    @settings(max_examples=50, deadline=None)
    @given(u=st.lists(st.floats(0, 1), min_size=2, max_size=2))
    def test_roundtrip(self, u):
        bounds = [[0.05, 20.0], [0.05, 20.0]]
        np.testing.assert_allclose(to_unit(from_unit(u, bounds), bounds), u, atol=1e-12)

    def test_psi_point_bounds(self):
        with pytest.raises(ValueError):
            PsiPoint([1.5], [[0.0, 1.0]])
        with pytest.raises(ValueError):
            PsiPoint([0.5, 0.5], [[0.0, 1.0]])
        assert PsiPoint([0.25], [[0.0, 1.0]]).unit[0] == pytest.approx(0.25)

    def test_gp_rows_layout(self):
        rows = gp_rows(np.array([[0.1, 0.2], [0.3, 0.4]]), 0.5, FP)
        np.testing.assert_allclose(rows, [[0.1, 0.2, 0.5, 0.2, 0.5], [0.3, 0.4, 0.5, 0.2, 0.5]])


class TestSelect:
    bounds = np.array([[0.0, 1.0]])

    def test_cold_start_uniform(self):
        rng = np.random.default_rng(0)
        cfg = AcquisitionConfig()
        bounds = np.array([[0.05, 20.0], [0.05, 20.0]])
        draws = np.array([select_psi(None, FP, 0.0, bounds, cfg, rng).psi.values for _ in range(4000)])
        assert np.all(draws >= 0.05) and np.all(draws <= 20.0)
        np.testing.assert_allclose(draws.mean(axis=0), 10.025, atol=0.4)

    def test_cold_start_below_threshold(self):
        sel = select_psi(QuadraticModel([0.7], n_obs=2), FP, 0.0, self.bounds,
                         AcquisitionConfig(cold_start=3), np.random.default_rng(0))
        assert np.isnan(sel.value) and len(sel.candidates) == 1

    def test_finds_synthetic_optimum(self):
        grid = np.linspace(0, 1, 10_001)
        oracle = grid[np.argmax(-(grid - 0.7) ** 2)]
        sel = select_psi(QuadraticModel([0.7]), FP, 0.0, self.bounds,
                         AcquisitionConfig(kappa=0.0), np.random.default_rng(1))
        assert abs(sel.psi.values[0] - oracle) < 0.05

    def test_with_fitted_gp(self):
        rng = np.random.default_rng(2)
        psi = rng.uniform(0, 1, 30)
        X = gp_rows(psi[:, None], 0.0, FP)
        y = -(psi - 0.7) ** 2
        gp = HellingerProductGP(psi_dim=1, optimize=False,
                                hypers=GPHypers(1.0, (0.3,), 1.0, 1.0, 1e-6)).fit(X, y)
        grid = np.linspace(0, 1, 2001)
        oracle = grid[np.argmax(gp.predict(gp_rows(grid[:, None], 0.0, FP)))]
        sel = select_psi(gp, FP, 0.0, self.bounds, AcquisitionConfig(kappa=0.0), rng)
        assert abs(sel.psi.values[0] - oracle) < 0.05
        assert abs(sel.psi.values[0] - 0.7) < 0.05

    def test_argmax_replay(self):
        model = QuadraticModel([0.3, 0.8], sd=0.1)
        bounds = np.array([[0.05, 20.0], [0.05, 20.0]])
        sel = select_psi(model, FP, 0.0, bounds, AcquisitionConfig(), np.random.default_rng(3))
        i = int(np.argmax(sel.values))
        assert sel.value == sel.values[i]
        np.testing.assert_allclose(from_unit(sel.candidates[i], bounds), sel.psi.values)
        mu, sd = model.predict(gp_rows(sel.candidates, 0.0, FP), return_std=True)
        np.testing.assert_allclose(ucb(mu, sd, 2.0), sel.values)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), cx=st.floats(-1, 2), cy=st.floats(-1, 2))
    def test_stays_in_bounds(self, seed, cx, cy):
        bounds = np.array([[0.05, 20.0], [0.0, 1.0]])
        sel = select_psi(QuadraticModel([cx, cy]), FP, 0.0, bounds,
                         AcquisitionConfig(n_candidates=50), np.random.default_rng(seed))
        assert np.all(sel.psi.values >= bounds[:, 0]) and np.all(sel.psi.values <= bounds[:, 1])

    def test_seeded(self):
        model = QuadraticModel([0.4], sd=0.2)
        a = select_psi(model, FP, 0.0, self.bounds, AcquisitionConfig(), np.random.default_rng(9))
        b = select_psi(model, FP, 0.0, self.bounds, AcquisitionConfig(), np.random.default_rng(9))
        np.testing.assert_array_equal(a.psi.values, b.psi.values)
