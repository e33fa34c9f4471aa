"""Virtual-time speedup curves: hierarchical-ring scaling and the strategy
ordering on a flat 16-learner cluster.

The hierarchical preset models multi-GPU nodes whose intra-node allreduce
runs on a shared PCIe fabric while the inter-node ring overlaps with
compute; the flat presets differ in collective latency.
"""

import argparse
from pathlib import Path

from psgdlab import problems as prob
from psgdlab.engine.costs import PRESETS
from psgdlab.engine.results import measure_speedup
from psgdlab.engine.simulator import simulate_run
from psgdlab.optimizer import LrSchedule
from psgdlab.strategies import StrategyKind, StrategySpec


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, help="optional CSV path")
    parser.add_argument("--seed", type=int, default=31)
    args = parser.parse_args()
    schedule = LrSchedule(kind="constant", alpha0=0.002)
    rows = []

    cost = PRESETS["hierarchical"]
    problem = prob.make_problem("quadratic_bowl", 8, 1, seed=args.seed)
    dataset = prob.generate("quadratic_bowl", args.seed, 65536, 64, 8, 1)
    baseline = simulate_run(
        StrategySpec(StrategyKind.SYNC_CENTRAL, 1, 128),
        problem, dataset, schedule, cost, 2, args.seed,
    )
    print("hierarchical ring, local batch 128, groups on a shared-fabric node:")
    for L, group in ((16, 4), (32, 8), (64, 8)):
        spec = StrategySpec(StrategyKind.H_RING, L, 128 * L, group_size=group)
        run = simulate_run(spec, problem, dataset, schedule, cost, 2, args.seed)
        s = measure_speedup(run, baseline)
        rows.append(("h_ring", L, s))
        print(f"  L={L:<3} groups of {group}: speedup {s:6.2f}  efficiency {s / L:.2f}")

    problem2 = prob.make_problem("quadratic_bowl", 10, 1, seed=args.seed + 1)
    dataset2 = prob.generate("quadratic_bowl", args.seed + 1, 384000, 3840, 10, 1)
    fast, slow = PRESETS["cluster_fast_allreduce"], PRESETS["cluster_slow_allreduce"]
    base2 = simulate_run(
        StrategySpec(StrategyKind.SYNC_CENTRAL, 1, 160),
        problem2, dataset2, schedule, fast, 1, args.seed + 1,
    )
    print("flat 16-learner cluster, global batch 2560:")
    for label, kind, preset in (
        ("ad_psgd", StrategyKind.AD_PSGD, fast),
        ("sd_psgd", StrategyKind.SD_PSGD, fast),
        ("sc_psgd (fast allreduce)", StrategyKind.SC_PSGD, fast),
        ("sc_psgd (slow allreduce)", StrategyKind.SC_PSGD, slow),
    ):
        run = simulate_run(
            StrategySpec(kind, 16, 2560),
            problem2, dataset2, schedule, preset, 1, args.seed + 1,
        )
        s = measure_speedup(run, base2)
        rows.append((label, 16, s))
        print(f"  {label:<26} speedup {s:6.2f}")

    if args.out:
        lines = ["strategy,learners,speedup"]
        lines += [f"{k},{L},{s!r}" for k, L, s in rows]
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
