"""Run configuration: JSON files, dot-path overrides, per-topic defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .agents import AgentConfig
from .llm import PriceTable


class ConfigError(ValueError):
    pass


# iterations and threads per topic when the config leaves them out
TOPIC_DEFAULTS: dict[str, dict[str, int]] = {
    "data_engineering": {"M": 5, "N": 32},
    "self_instruct": {"M": 15, "N": 1},
    "language_modeling": {"M": 10, "N": 1},
}

# screening thresholds on validation benchmarks, unit-scale quality and perplexity
SCREEN_DEFAULTS: dict[str, dict[str, float]] = {
    "data_engineering": {"quality_val": 0.15},
    "language_modeling": {"perplexity_val": 0.1},
}


@dataclass(frozen=True)
class FalsificationConfig:
    enabled: bool = True
    thresholds: Mapping[str, float] = field(default_factory=dict)
    max_candidates: int = 2
    max_plans: int = 2
    trials_per_arm: int = 2
    alpha: float = 0.05
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if any(v <= 0 for v in self.thresholds.values()):
            raise ConfigError("screening thresholds must be positive")
        if self.max_candidates < 1 or self.max_plans < 1:
            raise ConfigError("K and T must be at least 1")
        if self.trials_per_arm < 2:
            raise ConfigError("trials_per_arm must be at least 2")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    topic: str
    M: int
    N: int
    N_s: int = 1
    seed: int = 0
    parallelism: int = 4
    environment: Mapping[str, Any] = field(default_factory=dict)
    backend: str = "http"
    backend_options: Mapping[str, Any] = field(default_factory=dict)
    agents: AgentConfig = field(default_factory=AgentConfig)
    falsification: FalsificationConfig = field(default_factory=FalsificationConfig)
    prices: PriceTable = field(default_factory=PriceTable)
    trivial_method: Mapping[str, Any] | None = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if not 1 <= self.N_s <= self.N:
            raise ConfigError(f"need 1 <= N_s <= N, got N_s={self.N_s}, N={self.N}")
        if self.N % self.N_s:
            raise ConfigError(f"N={self.N} must be a multiple of N_s={self.N_s}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        d = copy.deepcopy(dict(data))
        topic = d.get("topic")
        if not isinstance(topic, str) or not topic:
            raise ConfigError("config needs a topic")
        defaults = TOPIC_DEFAULTS.get(topic, {"M": 1, "N": 1})
        try:
            agents = AgentConfig(**{"max_iterations": d.get("M", defaults["M"]), **d.get("agents", {})})
            fals = dict(d.get("falsification", {}))
            fals.setdefault("thresholds", SCREEN_DEFAULTS.get(topic, {}))
            prices = PriceTable(**d.get("prices", {}))
            return cls(
                topic=topic,
                M=int(d.get("M", defaults["M"])),
                N=int(d.get("N", defaults["N"])),
                N_s=int(d.get("N_s", 1)),
                seed=int(d.get("seed", 0)),
                parallelism=int(d.get("parallelism", 4)),
                environment=d.get("environment", {}),
                backend=d.get("backend", "http"),
                backend_options=d.get("backend_options", {}),
                agents=agents,
                falsification=FalsificationConfig(**fals),
                prices=prices,
                trivial_method=d.get("trivial_method"),
                raw=d,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "M": self.M,
            "N": self.N,
            "N_s": self.N_s,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "environment": dict(self.environment),
            "backend": self.backend,
            "backend_options": dict(self.backend_options),
            "agents": {
                "proposal_candidates": self.agents.proposal_candidates,
                "proposal_temperature": self.agents.proposal_temperature,
                "review_temperature": self.agents.review_temperature,
                "model": self.agents.model,
                "max_tokens": self.agents.max_tokens,
                "enable_code_metrics": self.agents.enable_code_metrics,
            },
            "falsification": {
                "enabled": self.falsification.enabled,
                "thresholds": dict(self.falsification.thresholds),
                "max_candidates": self.falsification.max_candidates,
                "max_plans": self.falsification.max_plans,
                "trials_per_arm": self.falsification.trials_per_arm,
                "alpha": self.falsification.alpha,
                "temperature": self.falsification.temperature,
            },
            "prices": {
                "input_per_million": self.prices.input_per_million,
                "output_per_million": self.prices.output_per_million,
            },
            "trivial_method": self.trivial_method,
        }


def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible, else taken as a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    path, _, text = assignment.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {assignment!r} has an empty key")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = data
    for k in keys[:-1]:
        child = node.get(k)
        if child is None:
            child = node[k] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"override {assignment!r}: {k!r} is not an object")
        node = child
    node[keys[-1]] = value
    return data
