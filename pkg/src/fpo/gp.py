"""Gaussian-process surrogate over (psi, iteration, fingerprint) with a product kernel.

GP inputs are packed into plain 2-D arrays so the model behaves like any other
scikit-learn regressor. One row is laid out as::

    [psi_1 .. psi_d, iteration, fp_mean_1 .. fp_mean_k, fp_std_1 .. fp_std_k]

The covariance is a single signal variance times three squared-exponential
factors: one over psi, one over the (rescaled) iteration, and one over the
squared Hellinger distance between the fingerprint Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gp_rows, check_random_state
from .policy import Fingerprint

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


# ---------------------------------------------------------------------------
# Hellinger distance
# ---------------------------------------------------------------------------


def hellinger_sq(f1, f2):
    """Squared Hellinger distance between two diagonal Gaussian fingerprints."""
    m1, s1 = np.asarray(f1.mean, float), np.asarray(f1.std, float)
    m2, s2 = np.asarray(f2.mean, float), np.asarray(f2.std, float)
    if m1.shape != m2.shape:
        raise ValueError(f"fingerprint dimension mismatch: {m1.shape} vs {m2.shape}")
    return float(_hellinger_sq_arrays(m1, s1, m2, s2))


def _hellinger_sq_arrays(m1, s1, m2, s2):
    var_sum = s1**2 + s2**2
    log_coef = 0.5 * np.sum(np.log(2.0 * s1 * s2 / var_sum), axis=-1)
    log_exp = -0.25 * np.sum((m1 - m2) ** 2 / var_sum, axis=-1)
    return np.clip(1.0 - np.exp(log_coef + log_exp), 0.0, 1.0)


def hellinger_sq_matrix(means_a, stds_a, means_b, stds_b):
    """Pairwise squared Hellinger distances, shape (len(a), len(b))."""
    return _hellinger_sq_arrays(means_a[:, None, :], stds_a[:, None, :],
                                means_b[None, :, :], stds_b[None, :, :])


# ---------------------------------------------------------------------------
# Inputs, datasets, hyperparameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPInput:
    psi: np.ndarray
    iteration: float
    fingerprint: Fingerprint

    def to_row(self):
        fp = self.fingerprint
        return np.concatenate([np.atleast_1d(self.psi).astype(float), [float(self.iteration)],
                               fp.mean, fp.std])


def split_rows(X, psi_dim):
    X = np.atleast_2d(X)
    k = (X.shape[1] - psi_dim - 1) // 2
    return X[:, :psi_dim], X[:, psi_dim], X[:, psi_dim + 1: psi_dim + 1 + k], X[:, psi_dim + 1 + k:]


@dataclass
class GPDataset:
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def add(self, x, y):
        if not np.isfinite(y):
            raise ValueError("GP outputs must be finite")
        self.inputs.append(x)
        self.outputs.append(float(y))

    def __len__(self):
        return len(self.outputs)

    @property
    def X(self):
        return np.vstack([x.to_row() for x in self.inputs])

    @property
    def y(self):
        return np.asarray(self.outputs, dtype=float)

    @property
    def output_mean(self):
        return float(np.mean(self.outputs)) if self.outputs else 0.0

    @property
    def output_std(self):
        s = float(np.std(self.outputs)) if self.outputs else 0.0
        return s if s > 1e-12 else 1.0


@dataclass(frozen=True)
class GPHypers:
    signal_var: float = 1.0
    lengthscales_psi: tuple = (0.3,)
    lengthscale_iter: float = 0.3
    lengthscale_fpr: float = 0.3
    noise_var: float = 0.1

    def __post_init__(self):
        values = [self.signal_var, self.lengthscale_iter, self.lengthscale_fpr, self.noise_var,
                  *self.lengthscales_psi]
        if any(not (v > 0) for v in values):
            raise ValueError(f"all GP hyperparameters must be positive: {self}")

    def to_log_vector(self):
        return np.log([self.signal_var, *self.lengthscales_psi, self.lengthscale_iter,
                       self.lengthscale_fpr, self.noise_var])

    @classmethod
    def from_log_vector(cls, z):
        v = np.exp(np.asarray(z, dtype=float))
        return cls(signal_var=float(v[0]), lengthscales_psi=tuple(float(x) for x in v[1:-3]),
                   lengthscale_iter=float(v[-3]), lengthscale_fpr=float(v[-2]),
                   noise_var=float(v[-1]))


@dataclass(frozen=True)
class HyperBounds:
    signal_var: tuple = (0.05, 20.0)
    lengthscale_psi: tuple = (0.05, 5.0)
    lengthscale_iter: tuple = (0.05, 5.0)
    lengthscale_fpr: tuple = (0.05, 5.0)
    noise_var: tuple = (1e-6, 2.0)

    def log_box(self, psi_dim):
        rows = [self.signal_var] + [self.lengthscale_psi] * psi_dim + [
            self.lengthscale_iter, self.lengthscale_fpr, self.noise_var]
        return np.log(np.asarray(rows, dtype=float))

    def default_hypers(self, psi_dim):
        box = self.log_box(psi_dim)
        return GPHypers.from_log_vector(box.mean(axis=1))


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _distance_terms(XA, XB, psi_dim):
    """Squared-distance pieces: per-psi-dim, iteration and Hellinger."""
    pa, na, ma, sa = split_rows(XA, psi_dim)
    pb, nb, mb, sb = split_rows(XB, psi_dim)
    d_psi = (pa[:, None, :] - pb[None, :, :]) ** 2
    d_iter = (na[:, None] - nb[None, :]) ** 2
    d_fpr = hellinger_sq_matrix(ma, sa, mb, sb)
    return d_psi, d_iter, d_fpr


def _kernel_from_terms(terms, h):
    d_psi, d_iter, d_fpr = terms
    inv_l2 = 1.0 / np.asarray(h.lengthscales_psi, dtype=float) ** 2
    quad = d_psi @ inv_l2 + d_iter / h.lengthscale_iter**2 + d_fpr / h.lengthscale_fpr**2
    return h.signal_var * np.exp(-0.5 * quad)


def kernel_matrix(XA, XB, h, psi_dim):
    return _kernel_from_terms(_distance_terms(XA, XB, psi_dim), h)


def kernel(x1, x2, h):
    """Product covariance between two :class:`GPInput` points."""
    psi_dim = len(np.atleast_1d(x1.psi))
    if len(np.atleast_1d(x2.psi)) != psi_dim:
        raise ValueError("psi dimensionality mismatch")
    return float(kernel_matrix(x1.to_row()[None], x2.to_row()[None], h, psi_dim)[0, 0])


def _cholesky(K):
    n = len(K)
    for jitter in JITTERS:
        try:
            return linalg.cholesky(K + jitter * np.eye(n) if jitter else K, lower=True), jitter
        except linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("Cholesky failed after maximum jitter")


def _log_marginal_likelihood(terms, y, h):
    K = _kernel_from_terms(terms, h)
    K[np.diag_indices_from(K)] += h.noise_var
    try:
        L, _ = _cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = linalg.cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * np.log(2 * np.pi))


def log_marginal_likelihood(X, y, h, psi_dim):
    """Log evidence of standardised outputs ``y`` under hyperparameters ``h``."""
    return _log_marginal_likelihood(_distance_terms(X, X, psi_dim), np.asarray(y, float), h)


def fit_hypers(X, y, psi_dim, bounds=None, n_restarts=8, n_rounds=4, rng=None, init=None,
               return_trace=False):
    """Maximise the log marginal likelihood by coordinate search in log space.

    Starts from ``n_restarts`` uniform draws in the log box (plus ``init`` when
    given). Each start is refined coordinate-wise with a halving step. Fewer than
    three observations return the box midpoint.
    """
    bounds = bounds if bounds is not None else HyperBounds()
    rng = check_random_state(rng)
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        h = bounds.default_hypers(psi_dim)
        return (h, []) if return_trace else h
    terms = _distance_terms(X, X, psi_dim)
    box = bounds.log_box(psi_dim)
    lo, hi = box[:, 0], box[:, 1]
    starts = [lo + (hi - lo) * rng.random(len(lo)) for _ in range(n_restarts)]
    if init is not None:
        starts.append(np.clip(init.to_log_vector(), lo, hi))

    def objective(z):
        return _log_marginal_likelihood(terms, y, GPHypers.from_log_vector(z))

    trace = []
    best_z, best_val = None, -np.inf
    for z in starts:
        z = z.copy()
        val = objective(z)
        trace.append((GPHypers.from_log_vector(z), val))
        step = 0.25 * (hi - lo)
        for _ in range(n_rounds):
            for d in range(len(z)):
                for sign in (1.0, -1.0):
                    cand = z.copy()
                    cand[d] = np.clip(z[d] + sign * step[d], lo[d], hi[d])
                    if cand[d] == z[d]:
                        continue
                    cv = objective(cand)
                    if cv > val:
                        z, val = cand, cv
                        break
            step = step * 0.5
        if val > best_val:
            best_z, best_val = z, val
    if best_z is None:
        h = bounds.default_hypers(psi_dim)
    else:
        h = GPHypers.from_log_vector(best_z)
    return (h, trace) if return_trace else h


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------


class HellingerProductGP(BaseEstimator, RegressorMixin):
    """GP regressor on packed (psi, iteration, fingerprint) rows.

    Outputs are standardised before fitting and predictions are mapped back.
    When ``optimize`` is true, hyperparameters are refit by
    :func:`fit_hypers` on every call to :meth:`fit`, warm-started from the
    previous fit.
    """

    def __init__(self, psi_dim=1, hypers=None, bounds=None, optimize=True, n_restarts=8,
                 n_rounds=4, random_state=None):
        self.psi_dim = psi_dim
        self.hypers = hypers
        self.bounds = bounds
        self.optimize = optimize
        self.n_restarts = n_restarts
        self.n_rounds = n_rounds
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_gp_rows(X, self.psi_dim), np.asarray(y, dtype=float)
        if len(X) != len(y):
            raise ValueError("X and y have different lengths")
        if len(y) == 0:
            raise ValueError("cannot fit a GP on an empty dataset")
        if not np.all(np.isfinite(y)):
            raise ValueError("GP outputs must be finite")
        self.y_mean_ = float(y.mean())
        s = float(y.std())
        self.y_std_ = s if s > 1e-12 else 1.0
        ys = (y - self.y_mean_) / self.y_std_
        bounds = self.bounds if self.bounds is not None else HyperBounds()
        if self.hypers is not None:
            h = self.hypers
        else:
            h = bounds.default_hypers(self.psi_dim)
        if self.optimize and len(y) >= 3:
            rng = check_random_state(self.random_state)
            h = fit_hypers(X, ys, self.psi_dim, bounds, self.n_restarts, self.n_rounds, rng,
                           init=getattr(self, "hypers_", h))
        self.hypers_ = h
        self.X_train_ = X
        self.y_train_ = y
        K = kernel_matrix(X, X, h, self.psi_dim)
        K[np.diag_indices_from(K)] += h.noise_var
        self.L_, self.jitter_ = _cholesky(K)
        self.alpha_ = linalg.cho_solve((self.L_, True), ys)
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "alpha_")
        X = check_gp_rows(X, self.psi_dim)
        h = self.hypers_
        Ks = kernel_matrix(X, self.X_train_, h, self.psi_dim)
        mu = Ks @ self.alpha_ * self.y_std_ + self.y_mean_
        if not return_std:
            return mu
        v = linalg.solve_triangular(self.L_, Ks.T, lower=True)
        var = h.signal_var - np.sum(v**2, axis=0)
        if np.any(var < -1e-8):
            raise FloatingPointError(f"negative posterior variance {var.min():.3g}")
        var = np.maximum(var, 0.0)
        return mu, np.sqrt(var) * self.y_std_

    def log_marginal_likelihood(self):
        check_is_fitted(self, "alpha_")
        ys = (self.y_train_ - self.y_mean_) / self.y_std_
        return log_marginal_likelihood(self.X_train_, ys, self.hypers_, self.psi_dim)


def posterior(data, h, query):
    """Posterior ``(mu, var)`` at one :class:`GPInput` for fixed hyperparameters.

    Variance is reported in output units (normalised variance times the output
    variance).
    """
    if len(data) == 0:
        raise ValueError("posterior requires at least one observation")
    psi_dim = len(np.atleast_1d(data.inputs[0].psi))
    gp = HellingerProductGP(psi_dim=psi_dim, hypers=h, optimize=False).fit(data.X, data.y)
    mu, sd = gp.predict(query.to_row()[None], return_std=True)
    return float(mu[0]), float(sd[0] ** 2)


def with_noise(h, noise_var):
    return replace(h, noise_var=noise_var)
