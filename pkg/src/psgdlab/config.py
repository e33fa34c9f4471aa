"""Experiment configuration: parsing, validation, and execution.

Configs are INI-style documents with five sections: ``[problem]``,
``[strategy]``, ``[schedule]``, ``[cost]`` and ``[run]``. Every key has a
documented default, unknown keys are rejected, and a parsed config renders
back to a canonical document that parses to an equal config (the manifest
written next to each run embeds that canonical form).
"""

from __future__ import annotations

import configparser
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

import psgdlab
from psgdlab import problems as prob
from psgdlab.dataset_io import load_dataset
from psgdlab.engine.costs import PRESETS, CostModel
from psgdlab.engine.results import RunResult, write_run_csvs
from psgdlab.engine.simulator import simulate_run
from psgdlab.engine.threaded import threaded_run
from psgdlab.optimizer import LrSchedule, ScheduleKind
from psgdlab.problems import ProblemKind
from psgdlab.strategies import StrategyKind, StrategySpec
from psgdlab.topology import MixingMatrix, validate_doubly_stochastic
from psgdlab.vectors import ParamVector

OUTPUT_ROOT_ENV = "PSGDLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    """A config document violates the schema or a constraint."""


@dataclass(frozen=True)
class ProblemConfig:
    kind: ProblemKind = ProblemKind.LOGISTIC
    d_x: int = 10
    d_y: int = 2
    hidden: tuple[int, ...] = (16,)
    n_train: int = 4096
    n_heldout: int = 512
    separation: float = 4.0
    dataset_file: str = ""


@dataclass(frozen=True)
class RunSection:
    backend: str = "simulate"
    epochs: int = 16
    seed: int = 1234
    output_dir: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    strategy: StrategySpec = field(
        default_factory=lambda: StrategySpec(
            kind=StrategyKind.SYNC_CENTRAL, learners=4, global_batch=256
        )
    )
    schedule: LrSchedule = field(default_factory=LrSchedule)
    cost: CostModel = field(default_factory=CostModel)
    run: RunSection = field(default_factory=RunSection)
    mixing: tuple[float, ...] = ()  # optional custom matrix, row-major


_SCHEMA = {
    "problem": (
        "kind",
        "d_x",
        "d_y",
        "hidden",
        "n_train",
        "n_heldout",
        "separation",
        "dataset_file",
    ),
    "strategy": (
        "kind",
        "learners",
        "global_batch",
        "group_size",
        "write_neighbors",
        "mixing",
    ),
    "schedule": (
        "kind",
        "alpha0",
        "peak",
        "warmup_epochs",
        "anneal_start_epoch",
        "anneal_factor",
    ),
    "cost": (
        "preset",
        "compute_seconds_per_sample",
        "model_bytes",
        "link_bandwidth",
        "link_latency",
        "intra_node_bandwidth",
        "intra_node_latency",
        "loader_overlap",
        "loader_seconds_per_sample",
        "eval_seconds_per_sample",
        "slowdowns",
    ),
    "run": ("backend", "epochs", "seed", "output_dir"),
}


class _Section:
    """Typed access to one config section with key tracking."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.raw = dict(parser[name]) if parser.has_section(name) else {}

    def _take(self, key: str) -> Optional[str]:
        return self.raw.pop(key, None)

    def value(self, key: str, default, kind):
        text = self._take(key)
        if text is None:
            return default
        try:
            if kind is bool:
                lowered = text.strip().lower()
                if lowered in ("true", "yes", "1", "on"):
                    return True
                if lowered in ("false", "no", "0", "off"):
                    return False
                raise ValueError(text)
            return kind(text)
        except ValueError as exc:
            raise ConfigError(
                f"[{self.name}] {key}: cannot parse {text!r} as {kind.__name__}"
            ) from exc

    def int_list(self, key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        text = self._take(key)
        if text is None:
            return default
        try:
            return tuple(int(tok) for tok in text.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: expected integers, got {text!r}") from exc

    def float_list(self, key: str) -> tuple[float, ...]:
        text = self._take(key)
        if text is None:
            return ()
        try:
            return tuple(float(tok) for tok in text.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: expected floats, got {text!r}") from exc

    def slowdown_map(self, key: str) -> dict[int, float]:
        """Either per-id pairs ``id:factor`` or a plain per-learner list."""
        text = self._take(key)
        if text is None or not text.strip():
            return {}
        out: dict[int, float] = {}
        tokens = [tok.strip() for tok in text.split(",") if tok.strip()]
        try:
            if any(":" in tok for tok in tokens):
                for tok in tokens:
                    lid, factor = tok.split(":")
                    out[int(lid)] = float(factor)
            else:
                for lid, tok in enumerate(tokens):
                    out[lid] = float(tok)
        except ValueError as exc:
            raise ConfigError(
                f"[{self.name}] {key}: expected 'id:factor' pairs or a float "
                f"list, got {text!r}"
            ) from exc
        return out

    def reject_unknown(self) -> None:
        if self.raw:
            unknown = ", ".join(sorted(self.raw))
            raise ConfigError(f"[{self.name}] unknown keys: {unknown}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a config document."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")

    psec = _Section(parser, "problem")
    problem = ProblemConfig(
        kind=_enum(ProblemKind, psec.value("kind", "logistic", str), "problem", "kind"),
        d_x=psec.value("d_x", 10, int),
        d_y=psec.value("d_y", 2, int),
        hidden=psec.int_list("hidden", (16,)),
        n_train=psec.value("n_train", 4096, int),
        n_heldout=psec.value("n_heldout", 512, int),
        separation=psec.value("separation", 4.0, float),
        dataset_file=psec.value("dataset_file", "", str),
    )
    psec.reject_unknown()

    ssec = _Section(parser, "strategy")
    mixing = ssec.float_list("mixing")
    try:
        strategy = StrategySpec(
            kind=_enum(
                StrategyKind, ssec.value("kind", "sync_central", str), "strategy", "kind"
            ),
            learners=ssec.value("learners", 4, int),
            global_batch=ssec.value("global_batch", 256, int),
            group_size=ssec.value("group_size", 1, int),
            write_neighbors=ssec.value("write_neighbors", False, bool),
        )
    except ValueError as exc:
        raise ConfigError(f"[strategy] {exc}") from exc
    ssec.reject_unknown()

    dsec = _Section(parser, "schedule")
    try:
        schedule = LrSchedule(
            kind=_enum(
                ScheduleKind, dsec.value("kind", "step_anneal", str), "schedule", "kind"
            ),
            alpha0=dsec.value("alpha0", 0.1, float),
            peak=dsec.value("peak", 1.0, float),
            warmup_epochs=dsec.value("warmup_epochs", 10, int),
            anneal_start_epoch=dsec.value("anneal_start_epoch", 10, int),
            anneal_factor=dsec.value("anneal_factor", 0.7071067811865476, float),
        )
    except ValueError as exc:
        raise ConfigError(f"[schedule] {exc}") from exc
    dsec.reject_unknown()

    csec = _Section(parser, "cost")
    preset_name = csec.value("preset", "", str)
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(
                f"[cost] preset: unknown preset {preset_name!r}; "
                f"choose from {sorted(PRESETS)}"
            )
        base = PRESETS[preset_name]
    else:
        base = CostModel()
    overrides = {}
    for key, kind in (
        ("compute_seconds_per_sample", float),
        ("model_bytes", float),
        ("link_bandwidth", float),
        ("link_latency", float),
        ("intra_node_bandwidth", float),
        ("intra_node_latency", float),
        ("loader_overlap", bool),
        ("loader_seconds_per_sample", float),
        ("eval_seconds_per_sample", float),
    ):
        sentinel = object()
        value = csec.value(key, sentinel, kind)
        if value is not sentinel:
            overrides[key] = value
    slowdowns = csec.slowdown_map("slowdowns")
    if slowdowns:
        overrides["slowdowns"] = slowdowns
    try:
        cost = replace(base, **overrides) if overrides else base
    except ValueError as exc:
        raise ConfigError(f"[cost] {exc}") from exc
    csec.reject_unknown()

    rsec = _Section(parser, "run")
    run = RunSection(
        backend=rsec.value("backend", "simulate", str),
        epochs=rsec.value("epochs", 16, int),
        seed=rsec.value("seed", 1234, int),
        output_dir=rsec.value("output_dir", "", str),
    )
    rsec.reject_unknown()

    config = ExperimentConfig(
        problem=problem,
        strategy=strategy,
        schedule=schedule,
        cost=cost,
        run=run,
        mixing=mixing,
    )
    _cross_validate(config)
    return config


def _enum(enum_cls, text, section, key):
    try:
        return enum_cls(text)
    except ValueError as exc:
        raise ConfigError(
            f"[{section}] {key}: {text!r} is not one of "
            f"{[e.value for e in enum_cls]}"
        ) from exc


def _cross_validate(config: ExperimentConfig) -> None:
    p, s, r = config.problem, config.strategy, config.run
    if r.backend not in ("simulate", "threaded"):
        raise ConfigError(
            f"[run] backend: {r.backend!r} is not one of ['simulate', 'threaded']"
        )
    if r.epochs < 1:
        raise ConfigError(f"[run] epochs: must be positive, got {r.epochs}")
    if p.n_train <= 0 or p.n_heldout <= 0:
        raise ConfigError(
            f"[problem] sample counts must be positive, got n_train={p.n_train}, "
            f"n_heldout={p.n_heldout}"
        )
    if p.d_x <= 0 or p.d_y <= 0:
        raise ConfigError(
            f"[problem] dimensions must be positive, got d_x={p.d_x}, d_y={p.d_y}"
        )
    if p.kind is ProblemKind.LOGISTIC and p.d_y != 2:
        raise ConfigError(f"[problem] logistic regression needs d_y=2, got {p.d_y}")
    if p.kind.is_classifier and p.d_x < p.d_y:
        raise ConfigError(
            f"[problem] classifier generation needs d_x >= d_y, got d_x={p.d_x}, "
            f"d_y={p.d_y}"
        )
    if p.kind is ProblemKind.MLP_SOFTMAX and (
        not p.hidden or any(h <= 0 for h in p.hidden)
    ):
        raise ConfigError(f"[problem] hidden: invalid layer sizes {p.hidden}")
    if s.learners > p.n_train:
        raise ConfigError(
            f"[strategy] learners: {s.learners} learners cannot shard "
            f"{p.n_train} training samples"
        )
    if s.kind.is_synchronous and p.n_train % s.global_batch != 0:
        raise ConfigError(
            f"[strategy] global_batch: synchronous runs need n_train divisible "
            f"by the global batch; {p.n_train} % {s.global_batch} != 0"
        )
    if config.mixing:
        L = s.learners
        if len(config.mixing) != L * L:
            raise ConfigError(
                f"[strategy] mixing: expected {L * L} row-major entries for "
                f"L={L}, got {len(config.mixing)}"
            )
        report = validate_doubly_stochastic(
            np.asarray(config.mixing).reshape(L, L)
        )
        if not report.passed:
            raise ConfigError(
                "[strategy] mixing: matrix is not doubly stochastic "
                f"(max row dev {report.max_row_deviation:.3e}, max col dev "
                f"{report.max_col_deviation:.3e}, entry violations "
                f"{report.entry_violations})"
            )
    for lid in config.cost.slowdowns:
        if not 0 <= lid < s.learners:
            raise ConfigError(
                f"[cost] slowdowns: learner id {lid} outside [0, {s.learners})"
            )


def render_config(config: ExperimentConfig) -> str:
    """Canonical document; ``parse_config`` on it returns an equal config."""
    p, s, d, c, r = (
        config.problem,
        config.strategy,
        config.schedule,
        config.cost,
        config.run,
    )
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for key, value in pairs:
            if value is None:
                continue
            out.write(f"{key} = {value}\n")
        out.write("\n")

    section(
        "problem",
        [
            ("kind", p.kind.value),
            ("d_x", p.d_x),
            ("d_y", p.d_y),
            ("hidden", ",".join(str(h) for h in p.hidden)),
            ("n_train", p.n_train),
            ("n_heldout", p.n_heldout),
            ("separation", repr(p.separation)),
            ("dataset_file", p.dataset_file if p.dataset_file else None),
        ],
    )
    section(
        "strategy",
        [
            ("kind", s.kind.value),
            ("learners", s.learners),
            ("global_batch", s.global_batch),
            ("group_size", s.group_size),
            ("write_neighbors", str(s.write_neighbors).lower()),
            (
                "mixing",
                ",".join(repr(x) for x in config.mixing) if config.mixing else None,
            ),
        ],
    )
    section(
        "schedule",
        [
            ("kind", d.kind.value),
            ("alpha0", repr(d.alpha0)),
            ("peak", repr(d.peak)),
            ("warmup_epochs", d.warmup_epochs),
            ("anneal_start_epoch", d.anneal_start_epoch),
            ("anneal_factor", repr(d.anneal_factor)),
        ],
    )
    slowdowns = (
        ",".join(f"{lid}:{repr(c.slowdowns[lid])}" for lid in sorted(c.slowdowns))
        if c.slowdowns
        else None
    )
    section(
        "cost",
        [
            ("compute_seconds_per_sample", repr(c.compute_seconds_per_sample)),
            ("model_bytes", repr(c.model_bytes)),
            ("link_bandwidth", repr(c.link_bandwidth)),
            ("link_latency", repr(c.link_latency)),
            ("intra_node_bandwidth", repr(c.intra_node_bandwidth)),
            ("intra_node_latency", repr(c.intra_node_latency)),
            ("loader_overlap", str(c.loader_overlap).lower()),
            ("loader_seconds_per_sample", repr(c.loader_seconds_per_sample)),
            ("eval_seconds_per_sample", repr(c.eval_seconds_per_sample)),
            ("slowdowns", slowdowns),
        ],
    )
    section(
        "run",
        [
            ("backend", r.backend),
            ("epochs", r.epochs),
            ("seed", r.seed),
            ("output_dir", r.output_dir if r.output_dir else None),
        ],
    )
    return out.getvalue()


# ---------------------------------------------------------------------------
# building runnable pieces from a config
# ---------------------------------------------------------------------------


def build_problem(config: ExperimentConfig) -> prob.Problem:
    p = config.problem
    return prob.make_problem(
        p.kind, p.d_x, p.d_y, hidden=p.hidden, seed=config.run.seed
    )


def build_dataset(config: ExperimentConfig) -> prob.Dataset:
    p = config.problem
    if p.dataset_file:
        dataset = load_dataset(p.dataset_file)
        if dataset.d_x != p.d_x or dataset.d_y != p.d_y:
            raise ConfigError(
                f"[problem] dataset_file: file has d_x={dataset.d_x}, "
                f"d_y={dataset.d_y} but the config declares d_x={p.d_x}, "
                f"d_y={p.d_y}"
            )
        return dataset
    return prob.generate(
        p.kind,
        config.run.seed,
        p.n_train,
        p.n_heldout,
        p.d_x,
        p.d_y,
        separation=p.separation,
    )


def build_mixing(config: ExperimentConfig) -> Optional[MixingMatrix]:
    if not config.mixing:
        return None
    L = config.strategy.learners
    return MixingMatrix(np.asarray(config.mixing).reshape(L, L))


def execute(config: ExperimentConfig) -> RunResult:
    """Run the configured experiment on its configured backend."""
    problem = build_problem(config)
    dataset = build_dataset(config)
    mixing = build_mixing(config)
    if config.run.backend == "simulate":
        return simulate_run(
            config.strategy,
            problem,
            dataset,
            config.schedule,
            config.cost,
            config.run.epochs,
            config.run.seed,
            mixing=mixing,
        )
    return threaded_run(
        config.strategy,
        problem,
        dataset,
        config.schedule,
        config.run.epochs,
        config.run.seed,
        mixing=mixing,
    )


def default_output_dir(config: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    s = config.strategy
    name = f"{s.kind.value}-L{s.learners}-seed{config.run.seed}"
    return root / name


def run_experiment(
    config: ExperimentConfig, output_dir: Optional[Path] = None
) -> tuple[RunResult, Path]:
    """Execute a config and write manifest plus metric CSVs to disk."""
    outdir = Path(
        output_dir
        if output_dir is not None
        else (config.run.output_dir or default_output_dir(config))
    )
    result = execute(config)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact_version": psgdlab.__version__,
        "seed": config.run.seed,
        "config": render_config(config),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    write_run_csvs(result, outdir)
    return result, outdir


# ---------------------------------------------------------------------------
# dry-run validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def validate(config: ExperimentConfig) -> list[CheckResult]:
    """Dry-run checks: topology, divisibility, and a gradient cross-check."""
    checks: list[CheckResult] = []
    s = config.strategy

    if s.kind.is_centralized or s.kind is StrategyKind.H_RING:
        checks.append(
            CheckResult("mixing_matrix", True, "not used by this strategy")
        )
    else:
        from psgdlab.topology import ring_matrix, uniform_matrix

        if config.mixing:
            matrix = build_mixing(config).entries
        elif s.kind is StrategyKind.SC_PSGD:
            matrix = uniform_matrix(s.learners).entries
        else:
            matrix = ring_matrix(s.learners).entries
        report = validate_doubly_stochastic(matrix)
        checks.append(
            CheckResult(
                "mixing_matrix",
                report.passed,
                f"max row dev {report.max_row_deviation:.2e}, "
                f"max col dev {report.max_col_deviation:.2e}, "
                f"entry violations {report.entry_violations}",
            )
        )

    divisible = s.global_batch % s.learners == 0
    checks.append(
        CheckResult(
            "batch_divisibility",
            divisible,
            f"global batch {s.global_batch} over {s.learners} learners "
            f"-> local batch {s.global_batch // s.learners}",
        )
    )
    if s.kind.is_synchronous:
        ok = config.problem.n_train % s.global_batch == 0
        checks.append(
            CheckResult(
                "epoch_divisibility",
                ok,
                f"n_train {config.problem.n_train} % global batch "
                f"{s.global_batch} == {config.problem.n_train % s.global_batch}",
            )
        )

    problem = build_problem(config)
    rng = np.random.default_rng([config.run.seed, 404])
    w = ParamVector(0.5 * rng.standard_normal(problem.dimension))
    small = replace(
        config.problem, n_train=max(32, min(config.problem.n_train, 128)), n_heldout=8
    )
    data = prob.generate(
        small.kind,
        config.run.seed,
        small.n_train,
        small.n_heldout,
        small.d_x,
        small.d_y,
        separation=small.separation,
    )
    batch = data.batch(np.arange(min(32, small.n_train)))
    analytic = prob.gradient(problem, w, batch)
    numeric = prob.finite_difference(problem, w, batch, epsilon=1e-5)
    denom = max(float(np.linalg.norm(analytic.values)), 1e-12)
    rel = float(np.linalg.norm(analytic.values - numeric.values)) / denom
    checks.append(
        CheckResult(
            "gradient_check",
            rel < 1e-5,
            f"max relative error {rel:.3e} (threshold 1e-5)",
        )
    )
    return checks
