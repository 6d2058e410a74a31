"""Wire a run together: config, environment, backend, store, both phases and the reports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from . import __version__
from .config import ConfigError, RunConfig
from .dsl import GrammarError, GrammarRegistry, default_registry
from .envs import Environment, EnvError, build_environment
from .falsification import run_falsification
from .llm import Backend, CostLedger, Gateway, HttpBackend, ScenarioError, ScriptedBackend
from .orchestrator import Services, run_pre_falsification
from .record import LOG_NAME, RunStore, write_canonical
from .report import build_report, cost_report, discovery_report, render_text

log = logging.getLogger(__name__)

COST_NAME = "cost_report.json"
DISCOVERY_NAME = "discovery_report.json"
REPORT_NAME = "report.txt"

# settings that may change between an interrupted run and its resumption
RESUME_FREE = ("backend", "backend_options", "parallelism")

PromptHook = Callable[[str, str], None]


def bundled(*parts: str) -> Path:
    return Path(str(resources.files("labloop").joinpath("fixtures", *parts)))


def resolve_config_path(path: str) -> Path:
    """A file path, or the name of a bundled fixture config."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (bundled(path), bundled(path + ".json"), bundled(p.name)):
        if candidate.exists():
            return candidate
    raise ConfigError(f"config file {path} not found")


def make_backend(spec: str, options: Mapping[str, Any] | None = None) -> Backend:
    """``scripted:<name or path>`` or ``http``."""
    options = dict(options or {})
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if not arg:
            raise ConfigError("scripted backend needs a scenario: scripted:<name|path>")
        path = Path(arg)
        if not path.exists():
            path = bundled("scenarios", arg if arg.endswith(".json") else arg + ".json")
        if not path.exists():
            raise ConfigError(f"scenario {arg!r} not found")
        try:
            return ScriptedBackend.from_file(path)
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from None
    if kind == "http":
        if "base_url" not in options:
            raise ConfigError("http backend needs backend_options.base_url")
        return HttpBackend(options["base_url"], options.get("model", "default"),
                           options.get("api_key_env", "LABLOOP_API_KEY"), float(options.get("timeout", 60.0)))
    raise ConfigError(f"unknown backend {spec!r}")


def make_environment(config: RunConfig) -> Environment:
    spec = dict(config.environment)
    if "path" in spec:
        try:
            spec = json.loads(Path(spec["path"]).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise EnvError(f"cannot load environment spec: {exc}") from None
    env = build_environment(spec)
    if env.topic_id != config.topic:
        raise ConfigError(f"environment serves topic {env.topic_id!r}, config asks for {config.topic!r}")
    return env


def manifest_for(config: RunConfig, registry: GrammarRegistry) -> dict:
    return {
        "topic": config.topic,
        "config": config.to_dict(),
        "seeds": {"run": config.seed},
        "grammar_version": registry.get(config.topic).version,
        "engine_version": __version__,
        "status": "running",
        "run_digest": None,
    }


@dataclass
class RunOutcome:
    run_dir: Path
    status: str
    falsification: str | None
    report: dict


def build_services(
    config: RunConfig,
    run_dir: str | Path,
    backend: Backend,
    *,
    resume: bool = False,
    registry: GrammarRegistry | None = None,
    env: Environment | None = None,
    on_prompt: PromptHook | None = None,
) -> Services:
    registry = registry or default_registry()
    try:
        registry.get(config.topic)
    except GrammarError:
        raise ConfigError(f"no grammar registered for topic {config.topic!r}") from None
    env = env or make_environment(config)
    run_dir = Path(run_dir)
    ledger = CostLedger(config.prices)
    if resume and (run_dir / LOG_NAME).exists():
        store = RunStore.open(run_dir)
        stored = {k: v for k, v in store.manifest.get("config", {}).items() if k not in RESUME_FREE}
        if stored != {k: v for k, v in config.to_dict().items() if k not in RESUME_FREE}:
            raise ConfigError("resume config differs from the one recorded in the run manifest")
        previous = run_dir / COST_NAME
        if previous.exists():
            for phase, totals in json.loads(previous.read_text("utf-8"))["phases"].items():
                ledger.restore(phase, totals)
        store.update_manifest(status="running", run_digest=None)
    else:
        store = RunStore.create(run_dir, manifest_for(config, registry))
    return Services(config, env, Gateway(backend, ledger), store, registry, on_prompt=on_prompt)


def write_reports(svc: Services) -> dict:
    store = svc.store
    cands = store.events_of("candidates")
    cost = cost_report(svc.gateway.ledger, svc.config.prices, len(store.events_of("selection")),
                       len(cands[-1].data["candidates"]) if cands else 0)
    write_canonical(store.run_dir / COST_NAME, cost)
    write_canonical(store.run_dir / DISCOVERY_NAME, discovery_report(store))
    report = build_report(store, cost)
    (store.run_dir / REPORT_NAME).write_text(render_text(report), encoding="utf-8")
    return report


def run_pipeline(svc: Services) -> RunOutcome:
    """Both phases, then the reports. On failure the partial log is finalized before re-raising."""
    status, fals = "aborted", None
    try:
        lineage = run_pre_falsification(svc)
        fals = run_falsification(svc, lineage)
        status = "completed"
    finally:
        svc.store.update_manifest(status=status, run_digest=svc.store.digest())
        report = write_reports(svc)
    return RunOutcome(svc.store.run_dir, status, fals, report)
