"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


def check_frames(frames, allow_single=True):
    """Return frames as a float64 ``(J, M, M)`` array, rejecting bad input."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (J, M, M) frame stack, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("frame stack is empty")
    if not allow_single and arr.shape[0] < 2:
        raise ValueError("at least 2 frames are required")
    if arr.shape[1] != arr.shape[2]:
        raise ValueError(f"frames must be square, got {arr.shape[1]}x{arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frames contain non-finite values")
    if np.any(arr < 0):
        raise ValueError("frames contain negative intensities")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_int(value, name, minimum):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_same_grid(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"grid mismatch: {sorted(shapes)}")
