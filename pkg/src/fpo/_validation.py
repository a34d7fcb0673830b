"""Small input-validation helpers shared across estimators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a SeedSequence or an existing Generator (returned as is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_gp_rows(X, psi_dim):
    X = check_array(X, ensure_2d=True, dtype=float)
    extra = X.shape[1] - psi_dim - 1
    if extra < 2 or extra % 2:
        raise ValueError(
            f"GP rows need psi_dim + 1 + 2k columns (got {X.shape[1]} with psi_dim={psi_dim})")
    k = extra // 2
    if np.any(X[:, psi_dim + 1 + k:] <= 0):
        raise ValueError("fingerprint std columns must be strictly positive")
    return X


def check_bounds(bounds):
    """Validate a ``(d, 2)`` box of ``[lo, hi]`` rows."""
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError(f"bounds must have shape (d, 2), got {b.shape}")
    if np.any(b[:, 0] > b[:, 1]) or not np.all(np.isfinite(b)):
        raise ValueError(f"invalid bounds {b.tolist()}")
    return b


def check_probability(p, name="p"):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p
