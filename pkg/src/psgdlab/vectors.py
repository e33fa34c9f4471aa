"""Dense float64 vector arithmetic underlying all parameter handling.

Every reduction accumulates in ascending index order, sequentially, so that
repeated runs with the same seed are bit-reproducible.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class ParamVector:
    """Immutable dense vector holding model parameters or a gradient.

    The dimension is fixed at construction and entries are checked to be
    finite. Operations return new vectors; instances are safe to share
    read-only across threads.
    """

    __slots__ = ("_values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"expected a 1-D sequence, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter vector contains NaN or Inf entries")
        arr.flags.writeable = False
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        """Read-only float64 array backing this vector."""
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def __len__(self) -> int:
        return self.dim

    def __getitem__(self, index):
        return self._values[index]

    def __iter__(self):
        return iter(self._values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"ParamVector({np.array2string(self._values, threshold=6)})"

    def copy(self) -> "ParamVector":
        return ParamVector(self._values)


def zeros(dim: int) -> ParamVector:
    """All-zero vector of the given dimension."""
    if dim <= 0:
        raise ValueError(f"dimension must be positive, got {dim}")
    return ParamVector(np.zeros(dim))


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``y + alpha * x`` elementwise; inputs are not modified."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: x has {x.dim}, y has {y.dim}")
    if not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    return ParamVector(y.values + alpha * x.values)


def mean_of(vectors: Sequence[ParamVector]) -> ParamVector:
    """Elementwise arithmetic mean with fixed ascending summation order."""
    if len(vectors) == 0:
        raise ValueError("mean_of requires at least one vector")
    first = vectors[0].values
    dim = first.shape[0]
    identical = True
    for i, v in enumerate(vectors):
        if v.dim != dim:
            raise ValueError(
                f"dimension mismatch: vector 0 has {dim}, vector {i} has {v.dim}"
            )
        if identical and not np.array_equal(v.values, first):
            identical = False
    if identical:
        # Identical inputs must average to themselves exactly; the summation
        # path below can round (e.g. three copies of 0.1).
        return ParamVector(first)
    acc = np.zeros(dim)
    for v in vectors:
        acc += v.values
    return ParamVector(acc / len(vectors))


def l2_distance(x: ParamVector, y: ParamVector) -> float:
    """Euclidean norm of ``x - y``; zero iff the vectors are bitwise equal."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: x has {x.dim}, y has {y.dim}")
    return float(np.linalg.norm(x.values - y.values))
