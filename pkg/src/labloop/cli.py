"""Command-line entry point: run, report, replay."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_override, load_config
from .dsl import canonical_dumps
from .envs import EnvError
from .llm import LLMError
from .orchestrator import RunAborted
from .pipeline import COST_NAME, build_services, make_backend, resolve_config_path, run_pipeline
from .record import LOG_NAME, MANIFEST_NAME, LogCorruptionError, RecordError, RunStore
from .report import build_report, render_text
from .verify import verify_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_ENVIRONMENT = 4
EXIT_ABORTED = 5
EXIT_DIVERGED = 6
EXIT_NO_LOG = 7

log = logging.getLogger("labloop")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labloop", description="Automated research loop with ablation-based falsification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run both phases and write the run directory")
    run.add_argument("--config", required=True, help="config file, or the name of a bundled fixture")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config field by dot path (repeatable)")
    run.add_argument("--backend", help="scripted:<scenario name or path>, or http")
    run.add_argument("--out", default="runs/latest", help="run directory (default: runs/latest)")
    run.add_argument("--seed", type=int, help="run seed")
    run.add_argument("--resume", action="store_true", help="continue the run already in --out")
    run.add_argument("--format", choices=("text", "json"), default="text")

    rep = sub.add_parser("report", help="summarize a complete or partial run")
    rep.add_argument("run_dir")
    rep.add_argument("--format", choices=("text", "json"), default="text")

    rp = sub.add_parser("replay", help="verify a run log and re-derive its computed fields")
    rp.add_argument("run_dir")
    return parser


def _emit(report: dict, fmt: str) -> None:
    sys.stdout.write(canonical_dumps(report) + "\n" if fmt == "json" else render_text(report))


def cmd_run(args: argparse.Namespace) -> int:
    try:
        data = load_config(resolve_config_path(args.config))
        for item in args.overrides:
            apply_override(data, item)
        if args.seed is not None:
            data["seed"] = args.seed
        if args.backend:
            data["backend"] = args.backend
        config = RunConfig.from_dict(data)
        backend = make_backend(config.backend, config.backend_options)
        svc = build_services(config, args.out, backend, resume=args.resume)
    except (ConfigError, RecordError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnvError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except LogCorruptionError as exc:
        print(f"cannot resume: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    try:
        outcome = run_pipeline(svc)
    except LLMError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except EnvError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    _emit(outcome.report, args.format)
    print(f"run directory: {outcome.run_dir}", file=sys.stderr)
    return EXIT_OK


def _open_store(run_dir: str) -> RunStore:
    path = Path(run_dir)
    if not (path / LOG_NAME).is_file() or not (path / MANIFEST_NAME).is_file():
        raise FileNotFoundError(f"{run_dir} has no run log")
    return RunStore.open(path)


def cmd_report(args: argparse.Namespace) -> int:
    try:
        store = _open_store(args.run_dir)
    except (OSError, ValueError) as exc:
        print(f"cannot read run: {exc}", file=sys.stderr)
        return EXIT_NO_LOG
    except LogCorruptionError as exc:
        print(f"corrupt log: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    cost_path = store.run_dir / COST_NAME
    cost = json.loads(cost_path.read_text("utf-8")) if cost_path.exists() else None
    _emit(build_report(store, cost), args.format)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.run_dir)
    if not (path / LOG_NAME).is_file() or not (path / MANIFEST_NAME).is_file():
        print(f"cannot read run: {args.run_dir} has no run log", file=sys.stderr)
        return EXIT_NO_LOG
    try:
        result = verify_run(path)
    except LogCorruptionError as exc:
        print(f"checksum mismatch: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as exc:
        print(f"cannot read run: {exc}", file=sys.stderr)
        return EXIT_NO_LOG
    if result.divergences:
        print(f"divergence at {result.divergences[0]}")
        return EXIT_DIVERGED
    print(f"verified ({len(result.state.events)} records, digest {result.state.digest})")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "report": cmd_report, "replay": cmd_replay}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
