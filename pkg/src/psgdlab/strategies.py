"""Execution-agnostic state machines for the five training strategies.

Each strategy is expressed as protocol steps over learner and parameter
server state; an engine backend decides when steps run and supplies
batches. The functions here own all model arithmetic so that the
virtual-time simulator and the threaded runtime produce identical numbers
when they schedule the same steps in the same order.

Engines must honor three contracts: the asynchronous ring step's
read-three-models-and-write-own is indivisible with respect to neighbors'
steps, synchronous rounds are full barriers, and asynchronous modes impose
no ordering beyond per-learner program order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from psgdlab import problems as prob
from psgdlab.topology import MixingMatrix, apply_mixing, ring_matrix, uniform_matrix
from psgdlab.vectors import ParamVector, axpy, mean_of


class ProtocolError(RuntimeError):
    """An engine violated a strategy precondition; this is an engine bug."""


class StrategyKind(str, enum.Enum):
    SYNC_CENTRAL = "sync_central"
    ASYNC_CENTRAL = "async_central"
    SC_PSGD = "sc_psgd"
    SD_PSGD = "sd_psgd"
    AD_PSGD = "ad_psgd"
    H_RING = "h_ring"

    @property
    def is_synchronous(self) -> bool:
        return self in (
            StrategyKind.SYNC_CENTRAL,
            StrategyKind.SC_PSGD,
            StrategyKind.SD_PSGD,
        )

    @property
    def is_centralized(self) -> bool:
        return self in (StrategyKind.SYNC_CENTRAL, StrategyKind.ASYNC_CENTRAL)


@dataclass(frozen=True)
class StrategySpec:
    """Which strategy to run and how the global batch splits across learners."""

    kind: StrategyKind
    learners: int
    global_batch: int
    group_size: int = 1  # h_ring: learners per super-learner
    write_neighbors: bool = False  # ad_psgd: also write the mixed model back

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.learners < 1:
            raise ValueError(f"learner count must be positive, got {self.learners}")
        if self.global_batch < 1:
            raise ValueError(f"global batch must be positive, got {self.global_batch}")
        if self.global_batch % self.learners != 0:
            raise ValueError(
                f"global batch {self.global_batch} is not divisible by "
                f"{self.learners} learners"
            )
        if self.kind in (StrategyKind.SD_PSGD, StrategyKind.AD_PSGD):
            if self.learners < 3:
                raise ValueError(
                    f"{self.kind.value} runs on a ring and requires L >= 3 "
                    f"(distinct left/right neighbors), got L={self.learners}"
                )
        if self.kind is StrategyKind.H_RING:
            if self.group_size < 1:
                raise ValueError(f"group size must be positive, got {self.group_size}")
            if self.learners % self.group_size != 0:
                raise ValueError(
                    f"{self.learners} learners do not split into groups of "
                    f"{self.group_size}"
                )
            if self.outer_count < 3:
                raise ValueError(
                    f"h_ring outer ring requires >= 3 super-learners, got "
                    f"{self.outer_count} ({self.learners} learners / "
                    f"{self.group_size} per group)"
                )

    @property
    def local_batch(self) -> int:
        return self.global_batch // self.learners

    @property
    def outer_count(self) -> int:
        return self.learners // self.group_size


@dataclass
class LearnerState:
    """One learner: its local model and consumption counters."""

    id: int
    model: ParamVector
    batches_done: int = 0
    samples_consumed: int = 0
    pulled_version: int = 0  # version of the PS model this learner last pulled

    def record_batch(self, local_batch: int) -> None:
        self.batches_done += 1
        self.samples_consumed += local_batch


@dataclass
class PsState:
    """The parameter server's global model and update counter."""

    model: ParamVector
    update_count: int = 0

    @property
    def model_version(self) -> int:
        return self.update_count


@dataclass(frozen=True)
class StalenessRecord:
    """Version gap between a pushed gradient's base model and the PS model."""

    learner_id: int
    tau: int

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"staleness cannot be negative, got {self.tau}")


def local_gradient(
    learner: LearnerState,
    problem: prob.Problem,
    batch: prob.BatchLike,
    local_batch: Optional[int] = None,
) -> ParamVector:
    """Gradient of the problem at the learner's current local model."""
    b = prob.as_batch(batch)
    if local_batch is not None and len(b) != local_batch:
        raise ValueError(
            f"learner {learner.id} expected a batch of {local_batch}, got {len(b)}"
        )
    return prob.gradient(problem, learner.model, b)


# ---------------------------------------------------------------------------
# synchronous centralized (parameter server with a full barrier)
# ---------------------------------------------------------------------------


def apply_sync_central(
    ps: PsState,
    learners: Sequence[LearnerState],
    grads: Sequence[ParamVector],
    alpha: float,
) -> list[StalenessRecord]:
    """Aggregate per-learner gradients and install the new global model."""
    new_model = axpy(-alpha, mean_of(list(grads)), ps.model)
    ps.model = new_model
    ps.update_count += 1
    records = []
    for learner in learners:
        learner.model = new_model
        learner.pulled_version = ps.update_count
        records.append(StalenessRecord(learner.id, 0))
    return records


def sync_central_round(
    ps: PsState,
    learners: Sequence[LearnerState],
    batches: Sequence[prob.BatchLike],
    alpha: float,
    problem: prob.Problem,
) -> list[StalenessRecord]:
    """One barrier round: all learners' gradients averaged into one update."""
    for learner in learners:
        if learner.pulled_version != ps.model_version:
            raise ProtocolError(
                f"learner {learner.id} holds version {learner.pulled_version} "
                f"but the server is at {ps.model_version}"
            )
    grads = [
        local_gradient(learner, problem, batch)
        for learner, batch in zip(learners, batches)
    ]
    records = apply_sync_central(ps, learners, grads, alpha)
    for learner, batch in zip(learners, batches):
        learner.record_batch(len(prob.as_batch(batch)))
    return records


# ---------------------------------------------------------------------------
# asynchronous centralized
# ---------------------------------------------------------------------------


def async_central_push(
    ps: PsState, learner: LearnerState, grad: ParamVector, alpha: float
) -> StalenessRecord:
    """Apply one learner's gradient immediately; the learner re-pulls.

    Staleness is the gap between the PS version now and the version the
    learner pulled before computing; it is expected, not an error.
    """
    tau = ps.model_version - learner.pulled_version
    if tau < 0:
        raise ProtocolError(
            f"learner {learner.id} claims version {learner.pulled_version} "
            f"ahead of the server ({ps.model_version})"
        )
    ps.model = axpy(-alpha, grad, ps.model)
    ps.update_count += 1
    learner.model = ps.model
    learner.pulled_version = ps.update_count
    return StalenessRecord(learner.id, tau)


# ---------------------------------------------------------------------------
# synchronous decentralized (global averaging; equals the PS round)
# ---------------------------------------------------------------------------


def apply_sc_psgd(
    learners: Sequence[LearnerState], grads: Sequence[ParamVector], alpha: float
) -> None:
    """Local steps followed by global model averaging."""
    stepped = [
        axpy(-alpha, grad, learner.model) for learner, grad in zip(learners, grads)
    ]
    mixed = apply_mixing(stepped, uniform_matrix(len(learners)))
    for learner, model in zip(learners, mixed):
        learner.model = model


def sc_psgd_round(
    learners: Sequence[LearnerState],
    batches: Sequence[prob.BatchLike],
    alpha: float,
    problem: prob.Problem,
) -> None:
    """One allreduce-style round; entry models must already agree."""
    first = learners[0].model
    for learner in learners[1:]:
        if learner.model != first:
            raise ProtocolError(
                f"learner {learner.id} entered an allreduce round with a "
                "divergent model"
            )
    grads = [
        local_gradient(learner, problem, batch)
        for learner, batch in zip(learners, batches)
    ]
    apply_sc_psgd(learners, grads, alpha)
    for learner, batch in zip(learners, batches):
        learner.record_batch(len(prob.as_batch(batch)))


# ---------------------------------------------------------------------------
# synchronous decentralized with neighbor averaging
# ---------------------------------------------------------------------------


def sd_psgd_round(
    learners: Sequence[LearnerState],
    batches: Sequence[prob.BatchLike],
    alpha: float,
    problem: prob.Problem,
    mixing: Optional[MixingMatrix] = None,
) -> None:
    """One barrier round of mixing plus local gradient steps.

    Gradients are evaluated at the pre-mixing models; the mixing term and
    the gradient term are combined at the round barrier, so local models
    generally differ across learners afterwards.
    """
    L = len(learners)
    matrix = mixing if mixing is not None else ring_matrix(L)
    if matrix.size != L:
        raise ValueError(
            f"mixing matrix is {matrix.size} x {matrix.size} but there are "
            f"{L} learners"
        )
    grads = [
        local_gradient(learner, problem, batch)
        for learner, batch in zip(learners, batches)
    ]
    mixed = apply_mixing([learner.model for learner in learners], matrix)
    for learner, mix, grad, batch in zip(learners, mixed, grads, batches):
        learner.model = axpy(-alpha, grad, mix)
        learner.record_batch(len(prob.as_batch(batch)))


# ---------------------------------------------------------------------------
# asynchronous decentralized ring
# ---------------------------------------------------------------------------


def mix_three(
    left: ParamVector, center: ParamVector, right: ParamVector
) -> ParamVector:
    """Equal-weight average of a learner and its two ring neighbors.

    Terms are summed in ascending learner-id order by the callers so the
    result matches the dense-matrix formulation bit for bit.
    """
    return ParamVector((left.values + center.values + right.values) / 3.0)


def ad_psgd_step(
    learner: LearnerState,
    left: LearnerState,
    right: LearnerState,
    problem: prob.Problem,
    batch: prob.BatchLike,
    alpha: float,
    write_neighbors: bool = False,
    gradient_model: Optional[ParamVector] = None,
) -> None:
    """One asynchronous step: gradient, then atomic three-way averaging.

    The gradient is evaluated at ``gradient_model`` (the model the learner
    held when the batch started; defaults to its current model). The learner
    then averages its own and both neighbors' current models and applies the
    gradient to the average, writing only its own model unless
    ``write_neighbors`` is set, in which case the neighbors also receive the
    plain average. The caller must make this step indivisible with respect
    to the neighbors' own steps.
    """
    base = gradient_model if gradient_model is not None else learner.model
    b = prob.as_batch(batch)
    grad = prob.gradient(problem, base, b)
    ordered = sorted((left, learner, right), key=lambda s: s.id)
    mixed = mix_three(ordered[0].model, ordered[1].model, ordered[2].model)
    learner.model = axpy(-alpha, grad, mixed)
    if write_neighbors:
        left.model = mixed
        right.model = mixed
    learner.record_batch(len(b))


def ring_neighbors(index: int, L: int) -> tuple[int, int]:
    """Left and right neighbor indices on a ring of L participants."""
    return (index - 1) % L, (index + 1) % L


# ---------------------------------------------------------------------------
# hierarchical ring: synchronous groups on an asynchronous outer ring
# ---------------------------------------------------------------------------


def group_mean_gradient(
    members: Sequence[LearnerState],
    batches: Sequence[prob.BatchLike],
    problem: prob.Problem,
) -> ParamVector:
    """Allreduce-averaged gradient of one group at its shared model."""
    first = members[0].model
    for member in members[1:]:
        if member.model != first:
            raise ProtocolError(
                f"group member {member.id} diverged from its group model"
            )
    grads = [
        local_gradient(member, problem, batch)
        for member, batch in zip(members, batches)
    ]
    return mean_of(grads)


def hring_super_step(
    groups: Sequence[Sequence[LearnerState]],
    group_index: int,
    grad: ParamVector,
    alpha: float,
) -> None:
    """Outer-ring step for one group acting as a single super-learner."""
    outer = len(groups)
    li, ri = ring_neighbors(group_index, outer)
    trio = sorted((li, group_index, ri))
    mixed = mix_three(
        groups[trio[0]][0].model, groups[trio[1]][0].model, groups[trio[2]][0].model
    )
    new_model = axpy(-alpha, grad, mixed)
    for member in groups[group_index]:
        member.model = new_model


def hring_round(
    groups: Sequence[Sequence[LearnerState]],
    batches: Sequence[Sequence[prob.BatchLike]],
    alpha: float,
    problem: prob.Problem,
) -> None:
    """Serial sweep of all super-learners, ascending group index.

    Within each group the gradient is allreduce-averaged over the members
    (all of which hold the group's shared model), then the group performs
    one asynchronous-ring step against its neighbor groups. With group size
    one this degenerates to a serial sweep of the plain asynchronous ring.
    """
    if len(groups) < 3:
        raise ValueError(f"outer ring requires >= 3 groups, got {len(groups)}")
    for g, (members, member_batches) in enumerate(zip(groups, batches)):
        grad = group_mean_gradient(members, member_batches, problem)
        hring_super_step(groups, g, grad, alpha)
        for member, batch in zip(members, member_batches):
            member.record_batch(len(prob.as_batch(batch)))
