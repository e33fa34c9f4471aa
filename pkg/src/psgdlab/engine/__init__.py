"""Execution backends: a virtual-time simulator and a threaded runtime."""

from psgdlab.engine.costs import CostModel, PRESETS, amdahl_bound, parallel_fraction
from psgdlab.engine.results import RunResult, measure_speedup, write_run_csvs
from psgdlab.engine.simulator import simulate_run
from psgdlab.engine.threaded import threaded_run

__all__ = [
    "CostModel",
    "PRESETS",
    "RunResult",
    "amdahl_bound",
    "measure_speedup",
    "parallel_fraction",
    "simulate_run",
    "threaded_run",
    "write_run_csvs",
]
