"""Real threaded runtime: one worker thread per learner.

Learners exchange models through guarded cells. The asynchronous ring step
acquires the three involved cells in ascending learner-id order, which
rules out circular waits and makes the read-three-write-own step
indivisible; synchronous rounds use a barrier whose action applies the
round's reduction in ascending learner order, so a synchronous threaded
run reproduces the simulator's arithmetic. Asynchronous trajectories are
schedule-dependent and intentionally not reproducible run to run.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

from psgdlab import problems as prob
from psgdlab.engine.results import RunResult
from psgdlab.engine.streams import OffsetStream, SyncBatcher
from psgdlab.optimizer import LrSchedule, lr_at
from psgdlab.strategies import (
    LearnerState,
    ProtocolError,
    PsState,
    StrategyKind,
    StrategySpec,
    apply_sc_psgd,
    apply_sync_central,
    async_central_push,
    mix_three,
    ring_neighbors,
)
from psgdlab.topology import MixingMatrix, apply_mixing, ring_matrix
from psgdlab.vectors import ParamVector, axpy, mean_of


class ModelCell:
    """A lock-guarded model slot with a version counter for torn-read checks."""

    def __init__(self, model: ParamVector):
        self.lock = threading.Lock()
        self._model = model
        self._version = 0

    def read(self) -> tuple[ParamVector, int]:
        with self.lock:
            return self._model, self._version

    def read_locked(self) -> tuple[ParamVector, int]:
        return self._model, self._version

    def write_locked(self, model: ParamVector) -> None:
        self._model = model
        self._version += 1


def _acquire_ordered(cells: list[ModelCell]) -> None:
    for cell in cells:
        cell.lock.acquire()


def _release(cells: list[ModelCell]) -> None:
    for cell in reversed(cells):
        cell.lock.release()


class _SharedCounters:
    """Sample reservation and consumption counters shared by async workers."""

    def __init__(self, quota: int, n: int):
        self.lock = threading.Lock()
        self.quota = quota
        self.n = n
        self.started = 0
        self.consumed = 0
        self.epochs_done = 0

    def reserve(self, amount: int) -> Optional[int]:
        """Reserve samples; returns the epoch they belong to, or None."""
        with self.lock:
            if self.started >= self.quota:
                return None
            epoch = self.started // self.n
            self.started += amount
            return epoch

    def consume(self, amount: int) -> Optional[int]:
        """Record completion; returns an epoch index if one just finished."""
        with self.lock:
            self.consumed += amount
            if self.consumed >= (self.epochs_done + 1) * self.n:
                epoch = self.epochs_done
                self.epochs_done += 1
                return epoch
            return None


def threaded_run(
    spec: StrategySpec,
    problem: prob.Problem,
    dataset: prob.Dataset,
    schedule: LrSchedule,
    epochs: int,
    seed: int,
    mixing: Optional[MixingMatrix] = None,
) -> RunResult:
    """Train with real concurrent workers honoring the strategy contracts."""
    if epochs < 1:
        raise ValueError(f"epochs must be positive, got {epochs}")
    if spec.kind.is_synchronous:
        runner = _SyncThreaded(spec, problem, dataset, schedule, epochs, seed, mixing)
    else:
        runner = _AsyncThreaded(spec, problem, dataset, schedule, epochs, seed)
    return runner.run()


class _RunnerBase:
    backend = "threaded"

    def __init__(self, spec, problem, dataset, schedule, epochs, seed):
        self.spec = spec
        self.problem = problem
        self.dataset = dataset
        self.schedule = schedule
        self.epochs = epochs
        self.seed = seed
        w0 = prob.initial_params(problem, seed)
        self.learners = [LearnerState(i, w0) for i in range(spec.learners)]
        self.heldout = dataset.heldout_batch()
        self.heldout_losses: list[float] = [0.0] * epochs
        self.epoch_walls: list[float] = [0.0] * epochs
        self.staleness: dict[int, int] = {}
        self.staleness_lock = threading.Lock()
        self.busy_seconds = 0.0
        self.busy_lock = threading.Lock()
        self.failure: Optional[BaseException] = None

    def add_busy(self, dt: float) -> None:
        with self.busy_lock:
            self.busy_seconds += dt

    def record_staleness(self, tau: int) -> None:
        with self.staleness_lock:
            self.staleness[tau] = self.staleness.get(tau, 0) + 1

    def eval_epoch(self, epoch: int, model: ParamVector, start: float) -> None:
        t0 = time.perf_counter()
        self.heldout_losses[epoch] = prob.loss(self.problem, model, self.heldout)
        self.add_busy(time.perf_counter() - t0)
        self.epoch_walls[epoch] = time.perf_counter() - start

    def build_result(self, final_model, wall: float) -> RunResult:
        walls = []
        prev = 0.0
        for cum in self.epoch_walls:
            walls.append(cum - prev)
            prev = cum
        processed = sum(s.samples_consumed for s in self.learners)
        return RunResult(
            strategy=self.spec.kind,
            backend=self.backend,
            learners=self.spec.learners,
            local_batch=self.spec.local_batch,
            epoch_wall_times=walls,
            heldout_loss_per_epoch=list(self.heldout_losses),
            lr_per_epoch=[lr_at(self.schedule, e) for e in range(self.epochs)],
            batches_per_learner=[s.batches_done for s in self.learners],
            staleness_histogram=dict(self.staleness),
            samples_processed=processed,
            samples_target=self.epochs * self.dataset.n_train,
            total_seconds=wall,
            speedup=max(self.busy_seconds, 1e-12) / max(wall, 1e-12),
            final_model=final_model,
        )

    def launch(self, workers) -> None:
        threads = [
            threading.Thread(target=self._guard, args=(w,), daemon=True)
            for w in workers
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self.failure is not None:
            raise self.failure

    def abort_barriers(self) -> None:
        """Release workers blocked on barriers after another worker failed."""

    def _guard(self, worker) -> None:
        try:
            worker()
        except threading.BrokenBarrierError:
            pass  # another worker failed and broke the round barrier
        except BaseException as exc:  # propagate the first worker failure
            if self.failure is None:
                self.failure = exc
            self.abort_barriers()


class _SyncThreaded(_RunnerBase):
    """Barrier-per-round execution; arithmetic matches the simulator."""

    def __init__(self, spec, problem, dataset, schedule, epochs, seed, mixing):
        super().__init__(spec, problem, dataset, schedule, epochs, seed)
        self.batcher = SyncBatcher(dataset, spec.global_batch, spec.learners, seed)
        self.mixing = mixing
        self.ps = (
            PsState(self.learners[0].model)
            if spec.kind is StrategyKind.SYNC_CENTRAL
            else None
        )
        self.grads: list[Optional[ParamVector]] = [None] * spec.learners
        self.epoch = 0
        self.round = 0
        self.start_time = 0.0
        self.barrier = threading.Barrier(spec.learners, action=self._round_action)

    def abort_barriers(self) -> None:
        self.barrier.abort()

    def _eval_model(self) -> ParamVector:
        if self.ps is not None:
            return self.ps.model
        if self.spec.kind is StrategyKind.SC_PSGD:
            return self.learners[0].model
        return mean_of([s.model for s in self.learners])

    def _round_action(self) -> None:
        # Runs in exactly one thread while all workers wait at the barrier.
        alpha = lr_at(self.schedule, self.epoch)
        grads = list(self.grads)
        if self.spec.kind is StrategyKind.SYNC_CENTRAL:
            apply_sync_central(self.ps, self.learners, grads, alpha)
            for _ in self.learners:
                self.record_staleness(0)
        elif self.spec.kind is StrategyKind.SC_PSGD:
            apply_sc_psgd(self.learners, grads, alpha)
            for _ in self.learners:
                self.record_staleness(0)
        else:
            matrix = self.mixing if self.mixing is not None else ring_matrix(
                self.spec.learners
            )
            mixed = apply_mixing([s.model for s in self.learners], matrix)
            for learner, mix, grad in zip(self.learners, mixed, grads):
                learner.model = axpy(-alpha, grad, mix)
                self.record_staleness(0)
        for learner in self.learners:
            learner.record_batch(self.spec.local_batch)
        self.round += 1
        if self.round == self.batcher.rounds_per_epoch:
            self.eval_epoch(self.epoch, self._eval_model(), self.start_time)
            self.round = 0
            self.epoch += 1

    def _worker(self, learner: LearnerState):
        # per-worker batcher: the permutation cache is not thread-safe
        batcher = SyncBatcher(
            self.dataset, self.spec.global_batch, self.spec.learners, self.seed
        )

        def work():
            for epoch in range(self.epochs):
                for r in range(batcher.rounds_per_epoch):
                    batch = batcher.learner_batch(epoch, r, learner.id)
                    t0 = time.perf_counter()
                    self.grads[learner.id] = prob.gradient(
                        self.problem, learner.model, batch
                    )
                    self.add_busy(time.perf_counter() - t0)
                    self.barrier.wait()

        return work

    def run(self) -> RunResult:
        self.start_time = time.perf_counter()
        self.launch([self._worker(s) for s in self.learners])
        wall = time.perf_counter() - self.start_time
        return self.build_result(self._eval_model(), wall)


class _AsyncThreaded(_RunnerBase):
    """Free-running workers against a server cell or a ring of cells."""

    def __init__(self, spec, problem, dataset, schedule, epochs, seed):
        super().__init__(spec, problem, dataset, schedule, epochs, seed)
        self.counters = _SharedCounters(epochs * dataset.n_train, dataset.n_train)
        self.streams = [
            OffsetStream(dataset, s.id, spec.learners, seed) for s in self.learners
        ]
        if spec.kind is StrategyKind.ASYNC_CENTRAL:
            self.ps = PsState(self.learners[0].model)
            self.ps_lock = threading.Lock()
            self.cells = None
        else:
            self.ps = None
            self.cells = [ModelCell(s.model) for s in self.learners]
        if spec.kind is StrategyKind.H_RING:
            g = spec.group_size
            self.groups = [
                self.learners[i * g : (i + 1) * g] for i in range(spec.outer_count)
            ]
            self.group_cells = [ModelCell(members[0].model) for members in self.groups]
            self.group_grads: list[list[Optional[ParamVector]]] = [
                [None] * g for _ in self.groups
            ]
            self.group_epochs: list[int] = [0] * len(self.groups)
            self.group_start = [threading.Barrier(g) for _ in self.groups]
            self.group_end = [
                threading.Barrier(g, action=self._group_action(i))
                for i in range(len(self.groups))
            ]
            self.group_stop = [False] * len(self.groups)
        else:
            self.groups = None

    def abort_barriers(self) -> None:
        if self.groups is not None:
            for barrier in (*self.group_start, *self.group_end):
                barrier.abort()

    # -- evaluation snapshot --------------------------------------------

    def _snapshot_mean(self) -> ParamVector:
        if self.ps is not None:
            with self.ps_lock:
                return self.ps.model
        if self.groups is not None:
            cells = list(self.group_cells)
        else:
            cells = list(self.cells)
        _acquire_ordered(cells)
        try:
            models = [cell.read_locked()[0] for cell in cells]
        finally:
            _release(cells)
        return mean_of(models)

    def _maybe_finish_epoch(self, finished_epoch: Optional[int]) -> None:
        if finished_epoch is not None and finished_epoch < self.epochs:
            self.eval_epoch(finished_epoch, self._snapshot_mean(), self.start_time)

    # -- asynchronous parameter server -----------------------------------

    def _ps_worker(self, learner: LearnerState):
        m_l = self.spec.local_batch
        stream = self.streams[learner.id]

        def work():
            while True:
                epoch = self.counters.reserve(m_l)
                if epoch is None:
                    return
                alpha = lr_at(self.schedule, min(epoch, self.epochs - 1))
                batch = stream.next_batch(m_l)
                t0 = time.perf_counter()
                grad = prob.gradient(self.problem, learner.model, batch)
                self.add_busy(time.perf_counter() - t0)
                with self.ps_lock:
                    record = async_central_push(self.ps, learner, grad, alpha)
                self.record_staleness(record.tau)
                learner.record_batch(m_l)
                self._maybe_finish_epoch(self.counters.consume(m_l))

        return work

    # -- asynchronous decentralized ring ----------------------------------

    def _ring_worker(self, learner: LearnerState):
        m_l = self.spec.local_batch
        stream = self.streams[learner.id]
        li, ri = ring_neighbors(learner.id, self.spec.learners)
        trio = sorted({li, learner.id, ri})
        cells = [self.cells[i] for i in trio]
        own = self.cells[learner.id]

        def work():
            while True:
                epoch = self.counters.reserve(m_l)
                if epoch is None:
                    return
                alpha = lr_at(self.schedule, min(epoch, self.epochs - 1))
                batch = stream.next_batch(m_l)
                base, base_version = own.read()
                t0 = time.perf_counter()
                grad = prob.gradient(self.problem, base, batch)
                self.add_busy(time.perf_counter() - t0)
                _acquire_ordered(cells)
                try:
                    models = {}
                    for idx, cell in zip(trio, cells):
                        model, version = cell.read_locked()
                        models[idx] = model
                        if idx == learner.id and not self.spec.write_neighbors:
                            if version != base_version:
                                raise ProtocolError(
                                    f"torn state: learner {learner.id} model "
                                    "changed outside its own step"
                                )
                    ordered = sorted(trio)
                    mixed = mix_three(
                        models[ordered[0]], models[ordered[1]], models[ordered[2]]
                    )
                    new_model = axpy(-alpha, grad, mixed)
                    own.write_locked(new_model)
                    learner.model = new_model
                    if self.spec.write_neighbors:
                        for idx, cell in zip(trio, cells):
                            if idx != learner.id:
                                cell.write_locked(mixed)
                                self.learners[idx].model = mixed
                finally:
                    _release(cells)
                learner.record_batch(m_l)
                self._maybe_finish_epoch(self.counters.consume(m_l))

        return work

    # -- hierarchical ring -------------------------------------------------

    def _group_action(self, gi: int):
        def action():
            members = self.groups[gi]
            grads = self.group_grads[gi]
            mean_grad = mean_of(list(grads))
            alpha = lr_at(
                self.schedule, min(self.group_epochs[gi], self.epochs - 1)
            )
            outer = len(self.groups)
            li, ri = ring_neighbors(gi, outer)
            trio = sorted({li, gi, ri})
            cells = [self.group_cells[i] for i in trio]
            _acquire_ordered(cells)
            try:
                models = {i: c.read_locked()[0] for i, c in zip(trio, cells)}
                ordered = sorted(trio)
                mixed = mix_three(
                    models[ordered[0]], models[ordered[1]], models[ordered[2]]
                )
                new_model = axpy(-alpha, mean_grad, mixed)
                self.group_cells[gi].write_locked(new_model)
            finally:
                _release(cells)
            for member in members:
                member.model = new_model
                member.record_batch(self.spec.local_batch)
            amount = self.spec.group_size * self.spec.local_batch
            self._maybe_finish_epoch(self.counters.consume(amount))

        return action

    def _hring_worker(self, learner: LearnerState, gi: int, slot: int):
        m_l = self.spec.local_batch
        stream = self.streams[learner.id]
        members = self.groups[gi]
        leader = slot == 0

        def work():
            while True:
                if leader:
                    epoch = self.counters.reserve(m_l * len(members))
                    if epoch is None:
                        self.group_stop[gi] = True
                    else:
                        self.group_epochs[gi] = epoch
                self.group_start[gi].wait()
                if self.group_stop[gi]:
                    return
                batch = stream.next_batch(m_l)
                t0 = time.perf_counter()
                self.group_grads[gi][slot] = prob.gradient(
                    self.problem, learner.model, batch
                )
                self.add_busy(time.perf_counter() - t0)
                self.group_end[gi].wait()

        return work

    def run(self) -> RunResult:
        spec = self.spec
        if spec.kind is StrategyKind.ASYNC_CENTRAL:
            workers = [self._ps_worker(s) for s in self.learners]
        elif spec.kind is StrategyKind.AD_PSGD:
            workers = [self._ring_worker(s) for s in self.learners]
        else:
            workers = [
                self._hring_worker(member, gi, slot)
                for gi, members in enumerate(self.groups)
                for slot, member in enumerate(members)
            ]
        self.start_time = time.perf_counter()
        self.launch(workers)
        wall = time.perf_counter() - self.start_time
        final = self._snapshot_mean()
        # the final epoch's loss reflects the fully drained run; in-flight
        # batches at the boundary crossing have landed by now
        self.heldout_losses[self.epochs - 1] = prob.loss(
            self.problem, final, self.heldout
        )
        # epochs whose boundary was never crossed (quota rounding) still
        # need a loss entry for reporting
        for e in range(self.epochs):
            if self.epoch_walls[e] == 0.0 and self.heldout_losses[e] == 0.0:
                self.heldout_losses[e] = prob.loss(self.problem, final, self.heldout)
                self.epoch_walls[e] = wall
        return self.build_result(final, wall)
