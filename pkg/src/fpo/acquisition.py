"""UCB acquisition and per-iteration selection of the sampling-distribution parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_bounds


@dataclass(frozen=True)
class AcquisitionConfig:
    kappa: float = 2.0
    n_candidates: int = 500
    n_refine: int = 3
    shrink: float = 0.3
    cold_start: int = 3

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


@dataclass(frozen=True)
class PsiPoint:
    values: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        bounds = check_bounds(self.bounds)
        if values.shape != (len(bounds),):
            raise ValueError("psi dimension does not match bounds")
        if np.any(values < bounds[:, 0] - 1e-12) or np.any(values > bounds[:, 1] + 1e-12):
            raise ValueError(f"psi {values.tolist()} outside bounds {bounds.tolist()}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", bounds)

    @property
    def unit(self):
        return to_unit(self.values, self.bounds)


def to_unit(psi, bounds):
    b = check_bounds(bounds)
    width = np.where(b[:, 1] > b[:, 0], b[:, 1] - b[:, 0], 1.0)
    return (np.asarray(psi, dtype=float) - b[:, 0]) / width


def from_unit(u, bounds):
    b = check_bounds(bounds)
    return b[:, 0] + np.asarray(u, dtype=float) * (b[:, 1] - b[:, 0])


def ucb(mu, sigma, kappa):
    """Upper confidence bound ``mu + kappa * sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    return mu + kappa * sigma


def gp_rows(psi_unit, iteration, fingerprint):
    """Pack candidate psi (in unit-box coordinates) with a fixed iteration and fingerprint."""
    psi_unit = np.atleast_2d(psi_unit)
    n = len(psi_unit)
    fixed = np.concatenate([[iteration], fingerprint.mean, fingerprint.std])
    return np.hstack([psi_unit, np.tile(fixed, (n, 1))])


@dataclass
class Selection:
    psi: PsiPoint
    value: float
    candidates: np.ndarray  # unit-box candidates, in evaluation order
    values: np.ndarray


def select_psi(model, fingerprint, iteration, bounds, config, rng, n_observations=None):
    """Pick the psi maximising UCB for the current fingerprint and iteration.

    ``model`` is a fitted regressor exposing ``predict(X, return_std=True)`` on
    packed GP rows (psi in unit-box coordinates). With fewer than
    ``config.cold_start`` observations (or no model), psi is drawn uniformly in
    ``bounds``. Returns a :class:`Selection` holding every evaluated candidate.
    """
    bounds = check_bounds(bounds)
    d = len(bounds)
    if n_observations is None:
        n_observations = 0 if model is None else len(getattr(model, "X_train_", ()))
    if model is None or n_observations < config.cold_start:
        u = rng.random(d)
        return Selection(PsiPoint(from_unit(u, bounds), bounds), np.nan, u[None], np.array([np.nan]))

    def acq(u):
        mu, sd = model.predict(gp_rows(u, iteration, fingerprint), return_std=True)
        return ucb(mu, sd, config.kappa)

    cands = [rng.random((config.n_candidates, d))]
    vals = [acq(cands[0])]
    best = int(np.argmax(vals[0]))
    best_u, best_v = cands[0][best], vals[0][best]
    step = 1.0
    for _ in range(config.n_refine):
        step *= config.shrink
        moves = np.vstack([best_u + s * step * e for e in np.eye(d) for s in (1.0, -1.0)])
        moves = np.clip(moves, 0.0, 1.0)
        mv = acq(moves)
        cands.append(moves)
        vals.append(mv)
        i = int(np.argmax(mv))
        if mv[i] > best_v:
            best_u, best_v = moves[i], mv[i]
    return Selection(PsiPoint(from_unit(best_u, bounds), bounds), float(best_v),
                     np.vstack(cands), np.concatenate(vals))
