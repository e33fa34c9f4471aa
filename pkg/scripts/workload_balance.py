"""Workload distribution across heterogeneous asynchronous learners.

Half the ring runs at full speed, half is slowed by background load; the
asynchronous ring lets fast learners pick up more mini-batches. Prints a
per-learner bar chart in the terminal.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from psgdlab import problems as prob
from psgdlab.engine.costs import PRESETS
from psgdlab.engine.simulator import simulate_run
from psgdlab.optimizer import LrSchedule
from psgdlab.strategies import StrategyKind, StrategySpec


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, help="optional CSV path")
    parser.add_argument("--seed", type=int, default=51)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    slowdowns = {i: float(f) for i, f in enumerate(rng.uniform(1.5, 3.0, 8), start=8)}
    cost = replace(PRESETS["ideal"], slowdowns=slowdowns)

    problem = prob.make_problem("quadratic_bowl", 6, 1, seed=args.seed)
    dataset = prob.generate("quadratic_bowl", args.seed, 64000, 64, 6, 1)
    schedule = LrSchedule(kind="constant", alpha0=0.002)
    spec = StrategySpec(StrategyKind.AD_PSGD, 16, 512)
    result = simulate_run(spec, problem, dataset, schedule, cost, 4, args.seed)

    top = max(result.batches_per_learner)
    print("mini-batches processed per learner in four epochs:")
    for learner, batches in enumerate(result.batches_per_learner):
        bar = "#" * int(40 * batches / top)
        tag = f"(slowed {cost.slowdown(learner):.1f}x)" if learner in slowdowns else ""
        print(f"  learner {learner:>2}: {batches:>5} {bar} {tag}")

    if args.out:
        lines = ["learner,slowdown,batches"]
        lines += [
            f"{l},{cost.slowdown(l)!r},{b}"
            for l, b in enumerate(result.batches_per_learner)
        ]
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
