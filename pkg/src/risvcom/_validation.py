"""Input checks shared by the estimator wrappers and the CLI."""
from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "check_complex_array",
    "check_positive",
    "check_int_range",
    "check_unit_modulus",
]


def check_complex_array(X, ndim=None, name: str = "X", shape=None, allow_empty: bool = False) -> np.ndarray:
    """Return ``X`` as a complex ndarray after shape and finiteness checks.

    Parameters
    ----------
    X : array_like
    ndim : int or tuple of int, optional
        Accepted numbers of dimensions.
    name : str
        Used in error messages.
    shape : tuple, optional
        Expected shape; ``None`` entries match any length.
    allow_empty : bool

    Raises
    ------
    ValueError
        On wrong dimensionality, shape, emptiness or non-finite entries.
    """
    try:
        arr = np.asarray(X, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} cannot be converted to a complex array") from exc
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, numbers.Integral) else tuple(ndim)
        if arr.ndim not in allowed:
            raise ValueError(f"{name} must have ndim in {allowed}, got {arr.ndim}")
    if shape is not None:
        if len(shape) != arr.ndim or any(s is not None and s != a for s, a in zip(shape, arr.shape)):
            raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or inf")
    return arr


def check_positive(x, name: str, strict: bool = True) -> float:
    """Return ``x`` as float, rejecting non-finite and (non-)positive values."""
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise ValueError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x)
    if not np.isfinite(x) or x < 0 or (strict and x == 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be finite and {bound}, got {x}")
    return x


def check_int_range(x, name: str, lo: int | None = None, hi: int | None = None) -> int:
    """Return ``x`` as int, rejecting bools, floats and values outside ``[lo, hi]``."""
    if isinstance(x, bool) or not isinstance(x, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {type(x).__name__}")
    x = int(x)
    if (lo is not None and x < lo) or (hi is not None and x > hi):
        raise ValueError(f"{name}={x} outside [{lo}, {hi}]")
    return x


def check_unit_modulus(theta, name: str = "theta", atol: float = 1e-9) -> np.ndarray:
    theta = check_complex_array(theta, name=name)
    if not np.allclose(np.abs(theta), 1.0, atol=atol):
        raise ValueError(f"{name} must be unit modulus")
    return theta
