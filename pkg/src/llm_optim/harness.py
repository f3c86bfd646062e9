"""Regret metrics, experiment sweeps and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from . import backends as bk
from . import env_numeric as en
from . import env_poem as ep
from .core import Trace
from .errors import AuthError, ConfigError, EmptyTrace, RunAborted
from .optimizer import NumericTask, OptimizerConfig, PoemTask, normalize_mode, run_spo

log = logging.getLogger(__name__)

BACKENDS = ("llm", "scripted-gradient", "scripted-fd", "random", "sgd")
SUMMARY_COLUMNS = ("condition", "function", "trials", "mean_simple", "std_simple", "mean_cureg", "std_cureg", "failures")
STEP_COLUMNS = ("condition", "task", "step", "mean_reward", "std_reward")
POEM_OPTIMUM = -1.0  # J = -reward and the best poem scores 1


# ---------------------------------------------------------------------------
# regret


def regret_curve(trace: Trace, optimum_value: float) -> list[float]:
    """|J(x_t) - J*| of the active parameter after every step, step 0 included."""
    if not trace.records:
        raise EmptyTrace("trace has no records")
    return [abs(-rec.reward - optimum_value) for rec in trace.active_records()]


def simple_regret(trace: Trace, optimum_value: float) -> float:
    return regret_curve(trace, optimum_value)[-1]


def cumulative_regret(trace: Trace, optimum_value: float) -> float:
    """Sum over steps 1..T; a trace with only its initial record counts that record."""
    curve = regret_curve(trace, optimum_value)
    return sum(curve[1:]) if len(curve) > 1 else curve[0]


def optimum_for(meta: dict) -> float:
    if meta.get("env") == "poem":
        return POEM_OPTIMUM
    return en.get_function(meta["function"]).optimum_value


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    env: str = "numeric"
    functions: list = field(default_factory=lambda: list(en.FUNCTIONS))
    syllables: list = field(default_factory=lambda: list(ep.TASK_SYLLABLES))
    modes: list = field(default_factory=lambda: ["directional", "nondirectional", "synthesized", "reward_only"])
    backends: list = field(default_factory=lambda: ["scripted-gradient", "scripted-fd", "random"])
    trials: int = 10
    steps: int = 10
    seed: int = 0
    eta: Union[float, dict, None] = None
    samples: Optional[int] = None
    history_budget: int = 10
    model: str = bk.DEFAULT_MODEL
    base_url: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self):
        if self.env not in ("numeric", "poem"):
            raise ConfigError(f"env must be numeric or poem, got {self.env!r}")
        try:
            self.functions = [en.get_function(f).name for f in self.functions]
            self.modes = [normalize_mode(m) for m in self.modes]
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for b in self.backends:
            if b not in BACKENDS:
                raise ConfigError(f"unknown backend {b!r}; choose from {BACKENDS}")
        if self.env == "poem" and set(self.backends) & {"sgd"}:
            raise ConfigError("the sgd baseline only applies to the numeric env")
        if self.trials < 1 or self.steps < 0:
            raise ConfigError("trials must be >= 1 and steps >= 0")
        self.syllables = [int(n) for n in self.syllables]

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a key/value mapping")
        return cls.from_mapping(data)

    def eta_for(self, function: str) -> float:
        if isinstance(self.eta, dict):
            return float(self.eta.get(function, en.DEFAULT_ETA.get(function, 0.05)))
        if self.eta is not None:
            return float(self.eta)
        return en.DEFAULT_ETA.get(function, 0.05)

    def trial_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.trials)]


@dataclass(frozen=True)
class Cell:
    env: str
    task: str  # function name or syllable target
    mode: str
    backend: str
    seed: int

    @property
    def filename(self) -> str:
        return f"{self.env}__{self.task}__{self.backend}__{self.mode}__seed{self.seed}.jsonl"


def cells(config: ExperimentConfig) -> list[Cell]:
    tasks = config.functions if config.env == "numeric" else [str(n) for n in config.syllables]
    return [
        Cell(config.env, task, mode, backend, seed)
        for task in tasks
        for mode in config.modes
        for backend in config.backends
        for seed in config.trial_seeds()
    ]


def numeric_start(function: en.TestFunction, seed: int) -> en.Point:
    """Start point shared by every condition of one trial."""
    return en.sample_start(function, np.random.default_rng(seed))[0]


def make_optimizer_backend(name: str, config: ExperimentConfig, seed: int, domain=None, eta: float = 0.05):
    if name == "llm":
        return bk.RemoteBackend(model=config.model, base_url=config.base_url)
    if name == "scripted-gradient":
        return bk.ScriptedGradientBackend(eta=eta, seed=seed)
    if name == "scripted-fd":
        return bk.ScriptedFiniteDifferenceBackend(eta=eta, seed=seed)
    if name == "random":
        return bk.ScriptedRandomBackend(domain, seed=[seed, 1])
    raise ConfigError(f"backend {name!r} has no chat interface")


def run_cell(cell: Cell, config: ExperimentConfig) -> Trace:
    """Run one sweep cell; failures come back as traces with status 'failed'."""
    meta = {"backend": cell.backend, "seed": cell.seed}
    if cell.env == "numeric":
        f = en.get_function(cell.task)
        eta = config.eta_for(f.name)
        start = numeric_start(f, cell.seed)
        if cell.backend == "sgd":
            trace = bk.sgd_run(f, start, eta, max(config.steps, 1))
            trace.meta.update(feedback_mode=cell.mode, seed=cell.seed)
            return trace
        task = NumericTask(f, start)
        meta["eta"] = eta
        agent = None
        optimizer = make_optimizer_backend(cell.backend, config, cell.seed, f.domain, eta)
    else:
        task = PoemTask(ep.PoemConstraint.uniform(int(cell.task)))
        optimizer = make_optimizer_backend(cell.backend, config, cell.seed)
        if cell.backend == "llm":
            agent = bk.RemoteBackend(model=config.model, base_url=config.base_url)
        else:
            agent = bk.ScriptedPoetBackend(seed=[cell.seed, 2])
    opt_config = OptimizerConfig(
        steps=config.steps,
        eval_samples=config.samples,
        history_budget=config.history_budget,
        feedback_mode=cell.mode,
        seed=cell.seed,
    )
    try:
        return run_spo(task, optimizer, opt_config, agent_backend=agent, meta=meta)
    except RunAborted as exc:
        log.warning("cell %s failed: %s", cell.filename, exc.cause)
        return exc.trace


def run_experiment(config: ExperimentConfig, out_dir, jobs: int = 1) -> list[dict]:
    """Run every cell, write one JSONL trace per cell, then the summary CSV(s)."""
    out = Path(out_dir)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    todo = cells(config)
    if "llm" in config.backends:
        # fail fast on missing credentials instead of once per cell
        try:
            bk.RemoteBackend(model=config.model, base_url=config.base_url).close()
        except AuthError as exc:
            raise ConfigError(str(exc)) from exc

    def work(cell: Cell) -> Trace:
        trace = run_cell(cell, config)
        trace.write(trace_dir / cell.filename)
        return trace

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(work, todo))
    else:
        traces = [work(cell) for cell in todo]
    # summarize what this sweep produced, not whatever else sits in the directory
    rows = summarize(traces)
    _write_csv(out / "summary.csv", rows, SUMMARY_COLUMNS)
    if config.env == "poem":
        _write_csv(out / "poem_steps.csv", step_rewards(traces), STEP_COLUMNS)
    return rows


# ---------------------------------------------------------------------------
# aggregation


def load_traces(in_dir) -> list[Trace]:
    return [Trace.read(p) for p in sorted(Path(in_dir).rglob("*.jsonl"))]


def _mean_std(values: Sequence[float]) -> tuple[str, str]:
    if not values:
        return "", ""
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return f"{mean:.6f}", f"{std:.6f}"


def _condition(meta: dict) -> str:
    return f"{meta['backend']}/{meta['feedback_mode']}"


def _task_label(meta: dict) -> str:
    return meta.get("function") or meta.get("constraint", "")


def summarize(traces: Sequence[Trace]) -> list[dict]:
    groups: dict[tuple[str, str], list[Trace]] = {}
    for trace in traces:
        groups.setdefault((_condition(trace.meta), _task_label(trace.meta)), []).append(trace)
    rows = []
    for (condition, task), group in sorted(groups.items()):
        ok = [t for t in group if t.meta.get("status", "ok") == "ok" and t.records]
        simple = [simple_regret(t, optimum_for(t.meta)) for t in ok]
        cureg = [cumulative_regret(t, optimum_for(t.meta)) for t in ok]
        ms, ss = _mean_std(simple)
        mc, sc = _mean_std(cureg)
        rows.append(
            {
                "condition": condition,
                "function": task,
                "trials": len(group),
                "mean_simple": ms,
                "std_simple": ss,
                "mean_cureg": mc,
                "std_cureg": sc,
                "failures": len(group) - len(ok),
            }
        )
    return rows


def step_rewards(traces: Sequence[Trace]) -> list[dict]:
    """Mean/std of the active reward per step, per condition and task."""
    groups: dict[tuple[str, str], list[Trace]] = {}
    for trace in traces:
        if trace.meta.get("status", "ok") == "ok" and trace.records:
            groups.setdefault((_condition(trace.meta), _task_label(trace.meta)), []).append(trace)
    rows = []
    for (condition, task), group in sorted(groups.items()):
        curves = [[rec.reward for rec in t.active_records()] for t in group]
        for step in range(max(len(c) for c in curves)):
            values = [c[step] for c in curves if step < len(c)]
            mean, std = _mean_std(values)
            rows.append({"condition": condition, "task": task, "step": step, "mean_reward": mean, "std_reward": std})
    return rows


def _write_csv(path, rows: list[dict], columns: Sequence[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def report(in_dir, csv_path, steps_csv=None) -> list[dict]:
    traces = load_traces(in_dir)
    rows = summarize(traces)
    _write_csv(csv_path, rows, SUMMARY_COLUMNS)
    if steps_csv is not None:
        _write_csv(steps_csv, step_rewards(traces), STEP_COLUMNS)
    return rows
