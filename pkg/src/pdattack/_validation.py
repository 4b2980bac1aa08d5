"""Input validation helpers shared by the estimators and attack routines."""

import numpy as np


class ShapeError(ValueError):
    """Raised when an array does not have the dimensions a model expects."""


class LabelError(ValueError):
    """Raised when a class label lies outside ``[0, n_classes)``."""


class ConfigError(ValueError):
    """Raised for invalid or inconsistent attack / run configuration."""


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a flat float64 copy, checking its length and finiteness."""
    v = np.asarray(x, dtype=np.float64).ravel()
    if dim is not None and v.size != dim:
        raise ShapeError(f"{name} has {v.size} features, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    return v


def check_label(y, n_classes):
    if isinstance(y, (bool, np.bool_)) or int(y) != y:
        raise LabelError(f"label {y!r} is not an integer")
    y = int(y)
    if not 0 <= y < n_classes:
        raise LabelError(f"label {y} out of range for {n_classes} classes")
    return y


def check_positive(value, name):
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_unit_box(x, name="x"):
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x
