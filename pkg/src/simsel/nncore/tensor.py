"""Tensor conventions.

All numeric payloads are row-major float64 numpy arrays. Public entry
points coerce through :func:`as_tensor`, which rejects NaN/Inf so that
non-finite values cannot enter the engine silently.
"""

import numpy as np

from ..errors import InvariantError


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce to a finite float64 array, optionally reshaping.

    Raises InvariantError on NaN/Inf or an element-count mismatch.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise InvariantError(
                f"tensor has {arr.size} values, shape {tuple(shape)} needs {expected}"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise InvariantError("tensor contains NaN or Inf")
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{what} contains NaN or Inf")
    return arr
