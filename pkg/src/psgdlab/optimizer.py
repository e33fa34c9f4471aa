"""The basic SGD update rule and per-epoch learning-rate schedules.

Two non-constant schedules are provided: a step anneal that multiplies the
rate by a fixed factor once per epoch after a start epoch, and a linear
warmup to a peak rate followed by the same anneal. Rates are constant
within an epoch; epochs are 0-based.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from psgdlab.vectors import ParamVector, axpy

ANNEAL_HALF_ROOT = 1.0 / math.sqrt(2.0)


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    STEP_ANNEAL = "step_anneal"
    WARMUP_ANNEAL = "warmup_anneal"


@dataclass(frozen=True)
class LrSchedule:
    kind: ScheduleKind = ScheduleKind.CONSTANT
    alpha0: float = 0.1
    peak: float = 1.0
    warmup_epochs: int = 10
    anneal_start_epoch: int = 10
    anneal_factor: float = ANNEAL_HALF_ROOT

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.alpha0 <= 0 or self.peak <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.anneal_factor < 1.0:
            raise ValueError(
                f"anneal_factor must lie in (0, 1), got {self.anneal_factor}"
            )
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be non-negative")
        if self.anneal_start_epoch < 0:
            raise ValueError("anneal_start_epoch must be non-negative")


def baseline_schedule(alpha0: float = 0.1, anneal_start_epoch: int = 10) -> LrSchedule:
    """Constant rate for the first epochs, then annealed by 1/sqrt(2)."""
    return LrSchedule(
        kind=ScheduleKind.STEP_ANNEAL,
        alpha0=alpha0,
        anneal_start_epoch=anneal_start_epoch,
    )


def warmup_schedule(
    alpha0: float = 0.1, peak: float = 1.0, warmup_epochs: int = 10
) -> LrSchedule:
    """Linear warmup to ``peak`` over the first epochs, then annealed."""
    return LrSchedule(
        kind=ScheduleKind.WARMUP_ANNEAL,
        alpha0=alpha0,
        peak=peak,
        warmup_epochs=warmup_epochs,
    )


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate in force throughout the given 0-based epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if schedule.kind is ScheduleKind.CONSTANT:
        return schedule.alpha0
    if schedule.kind is ScheduleKind.STEP_ANNEAL:
        if epoch < schedule.anneal_start_epoch:
            return schedule.alpha0
        steps = epoch - schedule.anneal_start_epoch + 1
        return schedule.alpha0 * schedule.anneal_factor**steps
    # warmup then anneal
    w = schedule.warmup_epochs
    if epoch < w:
        if w == 1:
            return schedule.peak
        frac = epoch / (w - 1)
        return schedule.alpha0 + (schedule.peak - schedule.alpha0) * frac
    return schedule.peak * schedule.anneal_factor ** (epoch - w + 1)


@dataclass(frozen=True)
class SgdState:
    """Parameters plus iteration/epoch counters for one SGD trajectory."""

    w: ParamVector
    iteration: int = 0
    epoch: int = 0


def sgd_step(state: SgdState, grad: ParamVector, alpha: float) -> SgdState:
    """Pure SGD update: ``w <- w - alpha * grad`` and bump the iteration."""
    if grad.dim != state.w.dim:
        raise ValueError(
            f"dimension mismatch: w has {state.w.dim}, grad has {grad.dim}"
        )
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return replace(state, w=axpy(-alpha, grad, state.w), iteration=state.iteration + 1)
