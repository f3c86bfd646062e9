"""Command-line entry point: ``optim run | sweep | report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import env_numeric as en
from .errors import AuthError, BackendError, ConfigError
from .harness import BACKENDS, Cell, ExperimentConfig, optimum_for, report, run_cell, run_experiment, simple_regret

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3

log = logging.getLogger("llm_optim")

FEEDBACK_CHOICES = ("directional", "nondirectional", "synthesized", "reward-only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optim", description="Prompt-optimization experiments with text feedback.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single optimization trace")
    run.add_argument("--env", choices=("numeric", "poem"), default="numeric")
    target = run.add_mutually_exclusive_group()
    target.add_argument("--function", help="test function (numeric env)")
    target.add_argument("--syllables", type=int, help="syllables per line (poem env)")
    run.add_argument("--feedback", choices=FEEDBACK_CHOICES, default="directional")
    run.add_argument("--backend", choices=BACKENDS, default="scripted-gradient")
    run.add_argument("--steps", type=int, default=10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output directory for the JSONL trace")
    run.add_argument("--eta", type=float, help="step size for scripted/sgd backends")
    run.add_argument("--samples", type=int, help="rollouts per reward estimate")
    run.add_argument("--history-budget", type=int, default=10)
    run.add_argument("--model", help="model name for the llm backend")
    run.add_argument("--base-url", help="OpenAI-compatible endpoint for the llm backend")

    sweep = sub.add_parser("sweep", help="run every cell of a YAML experiment config")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", help="output directory (overrides the config's `out`)")

    rep = sub.add_parser("report", help="aggregate traces into a summary CSV")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.add_argument("--csv", required=True)
    return parser


def _run(args) -> int:
    if args.env == "numeric":
        if args.syllables is not None:
            raise ConfigError("--syllables applies to the poem env")
        task = en.get_function(args.function or "booth").name
    else:
        if args.function is not None:
            raise ConfigError("--function applies to the numeric env")
        task = str(args.syllables if args.syllables is not None else 7)
    if args.steps < 0 or (args.samples is not None and args.samples < 1):
        raise ConfigError("--steps must be >= 0 and --samples >= 1")
    settings = dict(
        env=args.env,
        modes=[args.feedback],
        backends=[args.backend],
        trials=1,
        steps=args.steps,
        seed=args.seed,
        eta=args.eta,
        samples=args.samples,
        history_budget=args.history_budget,
        base_url=args.base_url,
    )
    if args.env == "numeric":
        settings["functions"] = [task]
    else:
        settings["syllables"] = [int(task)]
    if args.model:
        settings["model"] = args.model
    config = ExperimentConfig(**settings)
    cell = Cell(args.env, task, config.modes[0], args.backend, args.seed)
    try:
        trace = run_cell(cell, config)
    except AuthError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / cell.filename
    trace.write(path)
    status = trace.meta.get("status", "ok")
    if status == "failed":
        log.error("run failed; partial trace written to %s", path)
        return EXIT_BACKEND
    regret = simple_regret(trace, optimum_for(trace.meta))
    print(f"{path}\tstatus={status}\tsimple_regret={regret:.6f}")
    return EXIT_OK


def _sweep(args) -> int:
    config = ExperimentConfig.load(args.config)
    out = args.out or config.out
    if not out:
        raise ConfigError("no output directory: pass --out or set `out` in the config")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    rows = run_experiment(config, out, jobs=args.jobs)
    failures = sum(int(r["failures"]) for r in rows)
    print(f"{len(rows)} summary rows written to {Path(out) / 'summary.csv'} ({failures} failed traces)")
    return EXIT_OK


def _report(args) -> int:
    if not Path(args.in_dir).is_dir():
        raise ConfigError(f"no such directory: {args.in_dir}")
    rows = report(args.in_dir, args.csv)
    print(f"{len(rows)} summary rows written to {args.csv}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "sweep": _sweep, "report": _report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
