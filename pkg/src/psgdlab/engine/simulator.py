"""Deterministic discrete-event simulator with virtual time.

Synchronous strategies advance round by round: a round's virtual time is
the slowest learner's batch time plus the round's communication cost (the
parameter server is costed as its allreduce equivalent). Asynchronous
strategies run on an event queue keyed by completion time with ties broken
by learner id, so equal-speed learners interleave round-robin and every
run is a pure function of its configuration and seed.

Communication in the asynchronous ring overlaps with gradient computation
and the atomic averaging commit is instantaneous, so a learner's cycle is
its batch compute time; the synchronous variants pay their collective at
the barrier. Heldout evaluation runs serially once per epoch and pauses
every learner, which shifts all pending events equally and leaves the
update order untouched.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Optional

from psgdlab import problems as prob
from psgdlab.engine.costs import CostModel
from psgdlab.engine.results import RunResult
from psgdlab.engine.streams import OffsetStream, SyncBatcher
from psgdlab.optimizer import LrSchedule, lr_at
from psgdlab.strategies import (
    LearnerState,
    PsState,
    StrategyKind,
    StrategySpec,
    ad_psgd_step,
    async_central_push,
    group_mean_gradient,
    hring_super_step,
    ring_neighbors,
    sc_psgd_round,
    sd_psgd_round,
    sync_central_round,
)
from psgdlab.topology import MixingMatrix
from psgdlab.vectors import ParamVector, mean_of


def simulate_run(
    spec: StrategySpec,
    problem: prob.Problem,
    dataset: prob.Dataset,
    schedule: LrSchedule,
    cost: CostModel,
    epochs: int,
    seed: int,
    mixing: Optional[MixingMatrix] = None,
    trace: Optional[list] = None,
) -> RunResult:
    """Run one configuration entirely in virtual time.

    ``trace``, if given, receives the post-update global model after every
    model update (the server model for centralized strategies, the shared
    or mean model otherwise).
    """
    if epochs < 1:
        raise ValueError(f"epochs must be positive, got {epochs}")
    if spec.learners > dataset.n_train:
        raise ValueError(
            f"{spec.learners} learners cannot shard {dataset.n_train} samples"
        )
    if spec.kind.is_synchronous:
        sim = _SyncSimulation(spec, problem, dataset, schedule, cost, epochs, seed)
        return sim.run(mixing, trace)
    sim = _AsyncSimulation(spec, problem, dataset, schedule, cost, epochs, seed)
    return sim.run(trace)


class _BaseSimulation:
    def __init__(self, spec, problem, dataset, schedule, cost, epochs, seed):
        self.spec = spec
        self.problem = problem
        self.dataset = dataset
        self.schedule = schedule
        self.cost = cost
        self.epochs = epochs
        self.seed = seed
        w0 = prob.initial_params(problem, seed)
        self.learners = [LearnerState(i, w0) for i in range(spec.learners)]
        self.heldout = dataset.heldout_batch()
        self.eval_time = cost.eval_time(dataset.n_heldout)
        self.heldout_losses: list[float] = []
        self.boundaries_raw: list[float] = []

    def eval_model(self) -> ParamVector:
        raise NotImplementedError

    def record_epoch(self, raw_time: float) -> None:
        self.boundaries_raw.append(raw_time)
        self.heldout_losses.append(
            prob.loss(self.problem, self.eval_model(), self.heldout)
        )

    def finish(self, raw_end: float, staleness: dict[int, int]) -> RunResult:
        walls = []
        prev = 0.0
        for raw in self.boundaries_raw:
            walls.append(raw - prev + self.eval_time)
            prev = raw
        # the last epoch's loss reflects the fully drained run (asynchronous
        # learners may have had batches in flight at the boundary crossing)
        if self.heldout_losses:
            self.heldout_losses[-1] = prob.loss(
                self.problem, self.eval_model(), self.heldout
            )
        total = raw_end + self.epochs * self.eval_time
        n, h = self.dataset.n_train, self.dataset.n_heldout
        baseline = self.epochs * self.cost.serial_epoch_seconds(n, h)
        processed = sum(s.samples_consumed for s in self.learners)
        return RunResult(
            strategy=self.spec.kind,
            backend="simulate",
            learners=self.spec.learners,
            local_batch=self.spec.local_batch,
            epoch_wall_times=walls,
            heldout_loss_per_epoch=self.heldout_losses,
            lr_per_epoch=[lr_at(self.schedule, e) for e in range(self.epochs)],
            batches_per_learner=[s.batches_done for s in self.learners],
            staleness_histogram=staleness,
            samples_processed=processed,
            samples_target=self.epochs * n,
            total_seconds=total,
            speedup=baseline / total,
            final_model=self.eval_model(),
        )


class _SyncSimulation(_BaseSimulation):
    """Round-barrier execution for the three synchronous strategies."""

    def __init__(self, spec, problem, dataset, schedule, cost, epochs, seed):
        super().__init__(spec, problem, dataset, schedule, cost, epochs, seed)
        self.batcher = SyncBatcher(dataset, spec.global_batch, spec.learners, seed)
        self.ps = (
            PsState(self.learners[0].model)
            if spec.kind is StrategyKind.SYNC_CENTRAL
            else None
        )

    def eval_model(self) -> ParamVector:
        if self.ps is not None:
            return self.ps.model
        if self.spec.kind is StrategyKind.SC_PSGD:
            return self.learners[0].model
        return mean_of([s.model for s in self.learners])

    def round_comm_time(self) -> float:
        if self.spec.kind is StrategyKind.SD_PSGD:
            return self.cost.neighbor_exchange_time()
        return self.cost.ring_allreduce_time(self.spec.learners)

    def run(self, mixing, trace) -> RunResult:
        spec, cost = self.spec, self.cost
        m_l = spec.local_batch
        compute = max(
            cost.batch_compute_time(s.id, m_l) for s in self.learners
        )
        round_time = compute + self.round_comm_time()
        zero_updates = 0
        t = 0.0
        for epoch in range(self.epochs):
            alpha = lr_at(self.schedule, epoch)
            for r in range(self.batcher.rounds_per_epoch):
                batches = [
                    self.batcher.learner_batch(epoch, r, s.id) for s in self.learners
                ]
                if spec.kind is StrategyKind.SYNC_CENTRAL:
                    sync_central_round(self.ps, self.learners, batches, alpha, self.problem)
                elif spec.kind is StrategyKind.SC_PSGD:
                    sc_psgd_round(self.learners, batches, alpha, self.problem)
                else:
                    sd_psgd_round(self.learners, batches, alpha, self.problem, mixing)
                zero_updates += spec.learners
                t += round_time
                if trace is not None:
                    trace.append(self.eval_model())
            self.record_epoch(t)
        return self.finish(t, {0: zero_updates})


class _Reservation:
    __slots__ = ("batch", "base_model", "epoch")

    def __init__(self, batch, base_model, epoch):
        self.batch = batch
        self.base_model = base_model
        self.epoch = epoch


class _AsyncSimulation(_BaseSimulation):
    """Event-queue execution for the asynchronous strategies."""

    def __init__(self, spec, problem, dataset, schedule, cost, epochs, seed):
        super().__init__(spec, problem, dataset, schedule, cost, epochs, seed)
        self.n = dataset.n_train
        self.quota = epochs * self.n
        self.started = 0
        self.consumed = 0
        self.done_epochs = 0
        self.staleness: dict[int, int] = {}
        if spec.kind is StrategyKind.H_RING:
            g = spec.group_size
            self.groups = [
                self.learners[i * g : (i + 1) * g] for i in range(spec.outer_count)
            ]
            self.units = list(range(spec.outer_count))
            self.unit_samples = g * spec.local_batch
            self.streams = [
                OffsetStream(dataset, s.id, spec.learners, seed) for s in self.learners
            ]
        else:
            self.groups = None
            self.units = list(range(spec.learners))
            self.unit_samples = spec.local_batch
            self.streams = [
                OffsetStream(dataset, s.id, spec.learners, seed) for s in self.learners
            ]
        if spec.kind is StrategyKind.ASYNC_CENTRAL:
            self.ps = PsState(self.learners[0].model)
        else:
            self.ps = None

    def eval_model(self) -> ParamVector:
        if self.ps is not None:
            return self.ps.model
        if self.groups is not None:
            return mean_of([members[0].model for members in self.groups])
        return mean_of([s.model for s in self.learners])

    def unit_cycle(self, unit: int) -> float:
        cost, m_l = self.cost, self.spec.local_batch
        if self.groups is not None:
            members = self.groups[unit]
            compute = max(cost.batch_compute_time(s.id, m_l) for s in members)
            return compute + cost.ring_allreduce_time(
                self.spec.group_size, intra_node=True
            )
        if self.spec.kind is StrategyKind.ASYNC_CENTRAL:
            return cost.batch_compute_time(unit, m_l) + cost.ps_roundtrip_time()
        # asynchronous ring: transfers overlap with compute, commit is atomic
        return cost.batch_compute_time(unit, m_l)

    def reserve(self, unit: int) -> Optional[_Reservation]:
        if self.started >= self.quota:
            return None
        epoch = min(self.started // self.n, self.epochs - 1)
        self.started += self.unit_samples
        m_l = self.spec.local_batch
        if self.groups is not None:
            members = self.groups[unit]
            batch = [self.streams[s.id].next_batch(m_l) for s in members]
            base = members[0].model
        else:
            batch = self.streams[unit].next_batch(m_l)
            base = self.learners[unit].model
        return _Reservation(batch, base, epoch)

    def complete(self, unit: int, res: _Reservation, trace) -> None:
        spec = self.spec
        alpha = lr_at(self.schedule, res.epoch)
        if spec.kind is StrategyKind.ASYNC_CENTRAL:
            learner = self.learners[unit]
            grad = prob.gradient(self.problem, res.base_model, res.batch)
            record = async_central_push(self.ps, learner, grad, alpha)
            self.staleness[record.tau] = self.staleness.get(record.tau, 0) + 1
            learner.record_batch(len(res.batch))
            if trace is not None:
                trace.append(self.ps.model)
        elif spec.kind is StrategyKind.AD_PSGD:
            learner = self.learners[unit]
            li, ri = ring_neighbors(unit, spec.learners)
            ad_psgd_step(
                learner,
                self.learners[li],
                self.learners[ri],
                self.problem,
                res.batch,
                alpha,
                write_neighbors=spec.write_neighbors,
                gradient_model=res.base_model,
            )
            if trace is not None:
                trace.append(learner.model)
        else:  # hierarchical ring
            members = self.groups[unit]
            grad = group_mean_gradient(members, res.batch, self.problem)
            hring_super_step(self.groups, unit, grad, alpha)
            for member, batch in zip(members, res.batch):
                member.record_batch(len(batch))
            if trace is not None:
                trace.append(members[0].model)
        self.consumed += self.unit_samples

    def run(self, trace) -> RunResult:
        counter = itertools.count()
        heap: list[tuple[float, int, int]] = []
        pending: dict[int, _Reservation] = {}
        for unit in self.units:
            res = self.reserve(unit)
            if res is None:
                break
            pending[unit] = res
            heapq.heappush(heap, (self.unit_cycle(unit), unit, next(counter)))
        raw_end = 0.0
        while heap:
            t, unit, _ = heapq.heappop(heap)
            raw_end = t
            res = pending.pop(unit)
            self.complete(unit, res, trace)
            while (
                self.done_epochs < self.epochs
                and self.consumed >= (self.done_epochs + 1) * self.n
            ):
                self.record_epoch(t)
                self.done_epochs += 1
            nxt = self.reserve(unit)
            if nxt is not None:
                pending[unit] = nxt
                heapq.heappush(heap, (t + self.unit_cycle(unit), unit, next(counter)))
        return self.finish(raw_end, self.staleness)
