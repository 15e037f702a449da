"""Input validation helpers shared by the public entry points."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidParameterError


def as_vector(x, name, length=None, allow_inf=False):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InvalidParameterError(f"{name} must be one-dimensional")
    if length is not None and arr.shape[0] != length:
        raise InvalidParameterError(f"{name} must have length {length}, got {arr.shape[0]}")
    if np.any(np.isnan(arr)):
        raise InvalidParameterError(f"{name} contains NaN")
    if not allow_inf and not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} must be finite")
    return arr


def as_square(x, name, size=None):
    arr = check_array(np.atleast_2d(np.asarray(x, dtype=float)), ensure_2d=True,
                      ensure_min_samples=1, input_name=name)
    if arr.shape[0] != arr.shape[1]:
        raise InvalidParameterError(f"{name} must be square, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InvalidParameterError(f"{name} must be {size}x{size}, got {arr.shape}")
    return arr


def check_spd(mat, name="sigma", rtol=1e-10):
    """Return the lower Cholesky factor of a symmetric positive-definite matrix."""
    scale = max(1.0, float(np.max(np.abs(mat))))
    if not np.allclose(mat, mat.T, rtol=0, atol=rtol * scale):
        raise InvalidParameterError(f"{name} must be symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"{name} is not positive definite") from exc


def check_positive_int(v, name, minimum=1):
    if int(v) != v or v < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}, got {v}")
    return int(v)
