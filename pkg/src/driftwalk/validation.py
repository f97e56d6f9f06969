"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InsufficientSamples, NotMeanZero, ValidationError
from .lattice import DriftField, LatticeDims, StreamTensorField, validate_drift

MEAN_ZERO_RTOL = 1e-10


def check_drift(X, validate=True):
    """Coerce ``X`` to a :class:`DriftField` and check the standing assumptions.

    Accepts a field or a raw ``(d, L, ..., L)`` array of positive components.
    Raises :class:`ValidationError` carrying the report on failure.
    """
    if isinstance(X, StreamTensorField):
        raise TypeError("expected a drift field, got a stream tensor; use curl() first")
    if not isinstance(X, DriftField):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim < 3:
            raise ValueError(f"drift array must have shape (d, L, ..., L); got {arr.shape}")
        X = DriftField(LatticeDims(arr.ndim - 1, arr.shape[1]), arr)
    if validate:
        report = validate_drift(X)
        if not report.passed:
            bad = report.failures()[0]
            raise ValidationError(f"invalid drift field: {bad.name} residual {bad.residual:g} "
                                  f"at {bad.site}", report)
    return X


def check_mean_zero(values, already_summed=False, scale=None):
    """Raise :class:`NotMeanZero` unless ``|sum f| <= 1e-10 * N * max|f|``."""
    values = np.asarray(values, dtype=np.float64)
    if already_summed:
        total = float(np.max(np.abs(values), initial=0.0))
        bound = MEAN_ZERO_RTOL * float(scale or 0.0)
    else:
        total = abs(float(values.sum()))
        bound = MEAN_ZERO_RTOL * values.size * float(np.max(np.abs(values), initial=0.0))
    if total > bound:
        raise NotMeanZero(f"field has nonzero mean (|sum| = {total:g})")


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number")
    if (strict and value <= 0) or (not strict and value < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return value


def check_endpoints(X, d=None, min_samples=1000):
    """Validate an ``(n_samples, d)`` displacement array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"endpoints must be 2-D (n_samples, d); got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"endpoints have {X.shape[1]} columns, expected {d}")
    if X.shape[0] < min_samples:
        raise InsufficientSamples(f"{X.shape[0]} samples < required {min_samples}")
    return X
