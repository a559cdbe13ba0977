"""Input validation helpers shared by the estimators and functional API."""

import math

import numpy as np

from .exceptions import BadP, CrossScreenError, EmptyData

DIRECTIONS = ("greater", "less")


def check_diffs(diffs, *, min_size=1, name="diffs"):
    """Return `diffs` as a finite 1-D float array.

    NaN entries are rejected; missing pairs must be dropped upstream.
    """
    arr = np.asarray(diffs, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise CrossScreenError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise EmptyData(f"{name} needs at least {min_size} value(s), got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise CrossScreenError(f"{name} contains non-finite values")
    return arr


def check_direction(direction):
    if direction not in DIRECTIONS:
        raise CrossScreenError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return direction


def check_gamma(gamma):
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma < 1:
        raise CrossScreenError(f"gamma must be >= 1, got {gamma}")
    return gamma


def check_level(level, name="level"):
    level = float(level)
    if not 0 < level < 1:
        raise CrossScreenError(f"{name} must lie in (0, 1), got {level}")
    return level


def check_pvalues(pvals):
    arr = np.asarray(pvals, dtype=float).reshape(-1)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise BadP("p-values must lie in [0, 1]")
    return arr


def kappa(gamma):
    """Worst-case probability that a pair's difference favors treatment."""
    return gamma / (1.0 + gamma)
