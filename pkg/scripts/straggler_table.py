"""Slow one of 16 learners by 2x/10x/100x and compare epoch times.

Synchronous rounds wait for the straggler, so epoch time scales with the
slowdown factor; the asynchronous ring just sheds the slow learner's
throughput share. Prints a table and optionally writes it as CSV.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from psgdlab import problems as prob
from psgdlab.engine.costs import PRESETS
from psgdlab.engine.simulator import simulate_run
from psgdlab.optimizer import LrSchedule
from psgdlab.strategies import StrategyKind, StrategySpec

LEARNERS = 16
GLOBAL_BATCH = 2560


def steady_epoch_seconds(spec, problem, dataset, schedule, cost, seed):
    # first epoch of two: the last epoch ends on the in-flight drain
    result = simulate_run(spec, problem, dataset, schedule, cost, 2, seed)
    return result.epoch_wall_times[0], result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, help="optional CSV path")
    parser.add_argument("--seed", type=int, default=21)
    parser.add_argument("--slow-learner", type=int, default=3)
    args = parser.parse_args()

    problem = prob.make_problem("quadratic_bowl", 10, 1, seed=args.seed)
    dataset = prob.generate("quadratic_bowl", args.seed, 384000, 3840, 10, 1)
    schedule = LrSchedule(kind="constant", alpha0=0.005)
    cost = PRESETS["cluster_fast_allreduce"]

    rows = []
    for kind in (StrategyKind.SYNC_CENTRAL, StrategyKind.AD_PSGD):
        spec = StrategySpec(kind, LEARNERS, GLOBAL_BATCH)
        base, _ = steady_epoch_seconds(spec, problem, dataset, schedule, cost, args.seed)
        for factor in (1.0, 2.0, 10.0, 100.0):
            run_cost = (
                cost if factor == 1.0
                else replace(cost, slowdowns={args.slow_learner: factor})
            )
            seconds, result = steady_epoch_seconds(
                spec, problem, dataset, schedule, run_cost, args.seed
            )
            rows.append((kind.value, factor, seconds, seconds / base, result.speedup))

    print(f"{'strategy':<14} {'slowdown':>8} {'sec/epoch':>12} {'vs base':>8} {'speedup':>8}")
    for kind, factor, seconds, ratio, speedup in rows:
        print(f"{kind:<14} {factor:>7.0f}x {seconds:>12.2f} {ratio:>8.2f} {speedup:>8.2f}")

    if args.out:
        lines = ["strategy,slowdown,epoch_seconds,ratio_to_base,speedup"]
        lines += [f"{k},{f!r},{s!r},{r!r},{sp!r}" for k, f, s, r, sp in rows]
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
