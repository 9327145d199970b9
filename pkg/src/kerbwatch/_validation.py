"""Input validation helpers in the scikit-learn idiom."""

import math

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError


def check_points(X, *, name="X", n_points=None):
    """Validate an ``(n, 2)`` float array of planar points.

    Accepts a single ``(2,)`` point and promotes it to ``(1, 2)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have 2 columns, got {X.shape[1]}")
    if n_points is not None and X.shape[0] != n_points:
        raise ValueError(f"{name} must hold exactly {n_points} points, got {X.shape[0]}")
    return X


def check_fraction(value, name, *, open_low=False, open_high=False):
    value = float(value)
    low_ok = value > 0.0 if open_low else value >= 0.0
    high_ok = value < 1.0 if open_high else value <= 1.0
    if not (math.isfinite(value) and low_ok and high_ok):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise DomainError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return value


def check_positive(value, name):
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_finite(*values, name="value"):
    for v in values:
        if not math.isfinite(v):
            raise DomainError(f"{name} must be finite, got {v!r}")
