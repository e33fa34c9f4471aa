"""Run metrics and their on-disk CSV form.

Every run directory holds exactly four files: ``manifest.json`` (written by
the harness), ``metrics.csv`` with one row per epoch
(``epoch,virtual_or_real_seconds,heldout_loss,lr``), ``workload.csv``
(``learner,batches``), and ``staleness.csv`` (``tau,count``; header only
for strategies whose staleness is identically zero). Floats are written
with shortest round-trip formatting so identical runs produce identical
bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from psgdlab.strategies import StrategyKind
from psgdlab.vectors import ParamVector

METRICS_COLUMNS = ["epoch", "virtual_or_real_seconds", "heldout_loss", "lr"]
WORKLOAD_COLUMNS = ["learner", "batches"]
STALENESS_COLUMNS = ["tau", "count"]


@dataclass
class RunResult:
    """Measured outcome of one training run on either backend."""

    strategy: StrategyKind
    backend: str
    learners: int
    local_batch: int
    epoch_wall_times: list[float]
    heldout_loss_per_epoch: list[float]
    lr_per_epoch: list[float]
    batches_per_learner: list[int]
    staleness_histogram: dict[int, int]
    samples_processed: int
    samples_target: int
    total_seconds: float
    speedup: float
    final_model: ParamVector = None
    check_invariants: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.check_invariants:
            if self.speedup <= 0:
                raise ValueError(f"speedup must be positive, got {self.speedup}")
            consumed = sum(self.batches_per_learner) * self.local_batch
            if consumed != self.samples_processed:
                raise ValueError(
                    f"bookkeeping mismatch: {consumed} samples from batch counts "
                    f"vs {self.samples_processed} recorded"
                )


def measure_speedup(parallel: RunResult, baseline: RunResult) -> float:
    """Baseline total time over parallel total time for the same workload."""
    if parallel.samples_target != baseline.samples_target:
        raise ValueError(
            f"runs processed different workloads: parallel targeted "
            f"{parallel.samples_target} samples, baseline "
            f"{baseline.samples_target}"
        )
    return baseline.total_seconds / parallel.total_seconds


def _fmt(x) -> str:
    return repr(float(x))


def write_run_csvs(result: RunResult, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(METRICS_COLUMNS)]
    for e, (t, loss, lr) in enumerate(
        zip(result.epoch_wall_times, result.heldout_loss_per_epoch, result.lr_per_epoch)
    ):
        lines.append(f"{e},{_fmt(t)},{_fmt(loss)},{_fmt(lr)}")
    (outdir / "metrics.csv").write_text("\n".join(lines) + "\n")

    lines = [",".join(WORKLOAD_COLUMNS)]
    for learner, batches in enumerate(result.batches_per_learner):
        lines.append(f"{learner},{batches}")
    (outdir / "workload.csv").write_text("\n".join(lines) + "\n")

    lines = [",".join(STALENESS_COLUMNS)]
    if result.strategy is StrategyKind.ASYNC_CENTRAL:
        for tau in sorted(result.staleness_histogram):
            lines.append(f"{tau},{result.staleness_histogram[tau]}")
    (outdir / "staleness.csv").write_text("\n".join(lines) + "\n")
