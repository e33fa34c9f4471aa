"""Doubly stochastic mixing matrices and consensus dynamics.

A mixing matrix describes how learners average their local models in one
communication step: new model j is the column-j weighted sum of all current
models. The two canonical constructions are the one-hop ring (each learner
averages with its immediate left and right neighbors) and the uniform
matrix (global averaging). Matrices are stored dense; learner counts stay
small here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from psgdlab.vectors import ParamVector, l2_distance, mean_of

STOCHASTIC_TOL = 1e-12


class MixingMatrix:
    """Square L x L averaging-weight matrix, immutable after construction."""

    __slots__ = ("_entries",)

    def __init__(self, entries) -> None:
        arr = np.array(entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"mixing matrix must be square, got shape {arr.shape}")
        arr.flags.writeable = False
        self._entries = arr

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def size(self) -> int:
        return self._entries.shape[0]

    def __repr__(self) -> str:
        return f"MixingMatrix(L={self.size})"


def ring_matrix(L: int) -> MixingMatrix:
    """One-hop ring averaging: weight 1/3 on self and each ring neighbor.

    Requires ``L >= 3`` so the left and right neighbors are distinct
    learners; a two-learner ring would silently double-count.
    """
    if L < 3:
        raise ValueError(
            f"ring requires L >= 3 for distinct left/right neighbors, got L={L}"
        )
    entries = np.zeros((L, L))
    third = 1.0 / 3.0
    for i in range(L):
        entries[i, (i - 1) % L] = third
        entries[i, i] = third
        entries[i, (i + 1) % L] = third
    return MixingMatrix(entries)


def uniform_matrix(L: int) -> MixingMatrix:
    """Global averaging: every entry 1/L."""
    if L < 1:
        raise ValueError(f"learner count must be positive, got {L}")
    return MixingMatrix(np.full((L, L), 1.0 / L))


@dataclass(frozen=True)
class StochasticityReport:
    """Outcome of checking a matrix for double stochasticity."""

    max_row_deviation: float
    max_col_deviation: float
    min_entry: float
    max_entry: float
    entry_violations: int
    tolerance: float = STOCHASTIC_TOL

    @property
    def passed(self) -> bool:
        return (
            self.max_row_deviation <= self.tolerance
            and self.max_col_deviation <= self.tolerance
            and self.entry_violations == 0
        )


def validate_doubly_stochastic(matrix) -> StochasticityReport:
    """Report row/column sum deviations and out-of-range entries."""
    if isinstance(matrix, MixingMatrix):
        entries = matrix.entries
    else:
        entries = np.asarray(matrix, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"matrix must be square, got shape {entries.shape}")
    row_dev = float(np.abs(entries.sum(axis=1) - 1.0).max())
    col_dev = float(np.abs(entries.sum(axis=0) - 1.0).max())
    lo = float(entries.min())
    hi = float(entries.max())
    violations = int(np.count_nonzero((entries < 0.0) | (entries > 1.0)))
    return StochasticityReport(
        max_row_deviation=row_dev,
        max_col_deviation=col_dev,
        min_entry=lo,
        max_entry=hi,
        entry_violations=violations,
    )


def apply_mixing(
    models: Sequence[ParamVector], matrix: MixingMatrix
) -> list[ParamVector]:
    """One averaging step: new model j = sum_i models[i] * t[i, j].

    Summation runs over ascending i so results are reproducible.
    """
    L = matrix.size
    if len(models) != L:
        raise ValueError(f"expected {L} models for an {L} x {L} matrix, got {len(models)}")
    dim = models[0].dim
    for i, m in enumerate(models):
        if m.dim != dim:
            raise ValueError(
                f"dimension mismatch: model 0 has {dim}, model {i} has {m.dim}"
            )
    t = matrix.entries
    mixed = []
    for j in range(L):
        acc = np.zeros(dim)
        for i in range(L):
            acc += models[i].values * t[i, j]
        mixed.append(ParamVector(acc))
    return mixed


def consensus_distance(models: Sequence[ParamVector]) -> float:
    """Largest distance of any local model from the current global mean."""
    center = mean_of(models)
    return max(l2_distance(m, center) for m in models)


def ring_second_eigenvalue(L: int) -> float:
    """Contraction rate of the one-hop ring toward consensus per step."""
    if L < 3:
        raise ValueError(f"ring requires L >= 3, got L={L}")
    return (1.0 + 2.0 * np.cos(2.0 * np.pi / L)) / 3.0
