"""Command-line interface.

Verbs: ``run <config>``, ``sweep <config> --vary key=v1,v2,...``,
``validate <config>``, ``dataset gen|export``. Exit codes: 0 on success,
1 when configuration or validation fails, 2 on runtime errors. The
``PSGDLAB_OUTPUT_ROOT`` environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import replace
from pathlib import Path

from psgdlab import problems as prob
from psgdlab.config import (
    ConfigError,
    ExperimentConfig,
    build_dataset,
    default_output_dir,
    parse_config,
    run_experiment,
    validate,
)
from psgdlab.dataset_io import save_dataset
from psgdlab.engine.results import RunResult

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _load_config(path: str, args) -> ExperimentConfig:
    text = Path(path).read_text()
    config = parse_config(text)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if overrides:
        config = replace(config, run=replace(config.run, **overrides))
    return config


def _cmd_run(args) -> int:
    config = _load_config(args.config, args)
    outdir = Path(args.out) if args.out else None
    result, where = run_experiment(config, outdir)
    print(f"run complete: {where}")
    print(
        f"  strategy={result.strategy.value} L={result.learners} "
        f"backend={result.backend}"
    )
    print(
        f"  total_seconds={result.total_seconds:.6g} "
        f"final_heldout_loss={result.heldout_loss_per_epoch[-1]:.6g} "
        f"speedup={result.speedup:.4g}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    key, _, values = args.vary.partition("=")
    if not values:
        raise ConfigError("--vary expects key=v1,v2,...")
    section, _, option = key.partition(".")
    if not option:
        raise ConfigError(f"--vary key must be section.option, got {key!r}")
    base_text = Path(args.config).read_text()
    root = Path(args.out) if args.out else default_output_dir(
        parse_config(base_text)
    ).with_name("sweep")
    rows: list[tuple[str, RunResult]] = []
    for value in values.split(","):
        import configparser

        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(base_text)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)
        buf = []
        for sec in parser.sections():
            buf.append(f"[{sec}]")
            buf.extend(f"{k} = {v}" for k, v in parser[sec].items())
            buf.append("")
        config = parse_config("\n".join(buf))
        if args.seed is not None:
            config = replace(config, run=replace(config.run, seed=args.seed))
        if args.backend:
            config = replace(config, run=replace(config.run, backend=args.backend))
        outdir = root / f"{option}={value}"
        result, _ = run_experiment(config, outdir)
        rows.append((value, result))
        print(f"sweep point {option}={value}: total_seconds={result.total_seconds:.6g}")
    lines = [f"{key},speedup,total_seconds"]
    for value, result in rows:
        lines.append(f"{value},{result.speedup!r},{result.total_seconds!r}")
    root.mkdir(parents=True, exist_ok=True)
    (root / "speedup.csv").write_text("\n".join(lines) + "\n")
    print(f"sweep complete: {root}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = _load_config(args.config, args)
    checks = validate(config)
    failed = False
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        failed = failed or not check.passed
    return EXIT_INVALID if failed else EXIT_OK


def _cmd_dataset(args) -> int:
    if args.dataset_cmd == "gen":
        dataset = prob.generate(
            args.kind,
            args.seed,
            args.n_train,
            args.n_heldout,
            args.d_x,
            args.d_y,
            separation=args.separation,
        )
        save_dataset(dataset, args.out)
        print(
            f"wrote {args.out}: {dataset.n_train} train + "
            f"{dataset.n_heldout} heldout samples, d_x={dataset.d_x}"
        )
        return EXIT_OK
    config = parse_config(Path(args.config).read_text())
    dataset = build_dataset(config)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out} from config {args.config}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psgdlab",
        description="Distributed SGD strategies over a virtual-time simulator "
        "or a threaded runtime",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("config")
    run_p.add_argument("--out", help="output directory for metrics and manifest")
    run_p.add_argument("--seed", type=int, help="override [run] seed")
    run_p.add_argument(
        "--backend", choices=["simulate", "threaded"], help="override [run] backend"
    )
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a config once per varied value")
    sweep_p.add_argument("config")
    sweep_p.add_argument(
        "--vary", required=True, help="section.option=v1,v2,... to sweep over"
    )
    sweep_p.add_argument("--out", help="root directory for sweep results")
    sweep_p.add_argument("--seed", type=int)
    sweep_p.add_argument("--backend", choices=["simulate", "threaded"])
    sweep_p.set_defaults(func=_cmd_sweep)

    val_p = sub.add_parser("validate", help="dry-run checks without training")
    val_p.add_argument("config")
    val_p.add_argument("--seed", type=int)
    val_p.add_argument("--backend", choices=["simulate", "threaded"])
    val_p.set_defaults(func=_cmd_validate)

    data_p = sub.add_parser("dataset", help="generate or export corpora")
    data_sub = data_p.add_subparsers(dest="dataset_cmd", required=True)
    gen_p = data_sub.add_parser("gen", help="generate a dataset file")
    gen_p.add_argument("--kind", default="logistic")
    gen_p.add_argument("--seed", type=int, default=1234)
    gen_p.add_argument("--n-train", type=int, default=4096, dest="n_train")
    gen_p.add_argument("--n-heldout", type=int, default=512, dest="n_heldout")
    gen_p.add_argument("--d-x", type=int, default=10, dest="d_x")
    gen_p.add_argument("--d-y", type=int, default=2, dest="d_y")
    gen_p.add_argument("--separation", type=float, default=4.0)
    gen_p.add_argument("--out", required=True)
    exp_p = data_sub.add_parser("export", help="export a config's dataset")
    exp_p.add_argument("config")
    exp_p.add_argument("--out", required=True)
    data_p.set_defaults(func=_cmd_dataset)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # runtime failure inside a backend
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
