"""Experiment environments: the contract plus two synthetic worlds with planted ground truth."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .dsl import ExperimentPlan
from .metrics import Sample, corpus_metrics
from .record import BenchmarkScore, ExperimentResult
from .seeds import rng_for

log = logging.getLogger(__name__)

PRINCIPLE_TOKEN = re.compile(r"\[(P\d+)\]")


class EnvError(RuntimeError):
    """The environment cannot run the plan (topic mismatch, malformed actions, bad data)."""


@dataclass(frozen=True)
class BenchmarkInfo:
    name: str
    split: str
    higher_is_better: bool = True


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    value: Any
    marker: str


class Environment(ABC):
    topic_id: str
    benchmarks: tuple[BenchmarkInfo, ...]
    synthetic = False

    @abstractmethod
    def execute(self, plan: ExperimentPlan, seed: int) -> ExperimentResult: ...

    @abstractmethod
    def trivial_method(self) -> dict: ...

    @property
    def validation_names(self) -> list[str]:
        return [b.name for b in self.benchmarks if b.split == "validation"]

    def describe(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "benchmarks": [{"name": b.name, "split": b.split, "higher_is_better": b.higher_is_better} for b in self.benchmarks],
        }

    def ground_truth(self) -> GroundTruth:
        raise EnvError(f"{type(self).__name__} has no planted ground truth")

    def _check(self) -> None:
        splits = {b.split for b in self.benchmarks}
        if splits != {"validation", "test"}:
            raise EnvError("an environment must advertise validation and test benchmarks")

    def _check_topic(self, plan: ExperimentPlan) -> None:
        if plan.topic_id != self.topic_id:
            raise EnvError(f"plan for topic {plan.topic_id!r} sent to a {self.topic_id!r} environment")


def ground_truth(env: Environment) -> GroundTruth:
    return env.ground_truth()


def execute(env: Environment, plan: ExperimentPlan, seed: int) -> ExperimentResult:
    return env.execute(plan, seed)


def _marker(*parts: object) -> str:
    return "gt-" + hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()[:20]


# -- planted data filtering ------------------------------------------------------

@dataclass(frozen=True)
class FilterRecord:
    id: str
    features: frozenset[str]
    quality: float
    instruction: str = ""
    response: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "features": sorted(self.features),
            "quality": self.quality,
            "instruction": self.instruction,
            "response": self.response,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FilterRecord":
        return cls(d["id"], frozenset(d["features"]), float(d["quality"]), d.get("instruction", ""), d.get("response", ""))


_TASKS = ["summarize", "explain", "translate", "sort", "classify", "rewrite", "outline", "compare", "debug", "plan"]
_OBJECTS = ["the report", "a recipe", "this poem", "the list", "an email", "the code", "a story", "the data", "the essay", "a lesson"]
_GOOD = ["clear", "helpful", "accurate", "detailed", "concise", "correct", "thorough", "useful"]
_BAD = ["vague", "wrong", "confusing", "incomplete", "sloppy", "unclear", "misleading", "incorrect"]
_FILLER = ["answer", "steps", "result", "response", "points", "section", "example", "notes", "draft", "version"]


def _synth_text(rng, quality: float) -> tuple[str, str]:
    task, obj = rng.choice(_TASKS), rng.choice(_OBJECTS)
    instruction = f"Please {task} {obj} for me."
    n = rng.randint(6, 40)
    words = [rng.choice(_FILLER) for _ in range(n)]
    tone = _GOOD if rng.random() < quality else _BAD
    for _ in range(rng.randint(1, 3)):
        words.insert(rng.randrange(len(words) + 1), rng.choice(tone))
    if rng.random() < 0.5:
        words[:0] = [task, obj.split()[-1]]
    return instruction, "Here is the " + " ".join(words) + "."


class PlantedFilterEnv(Environment):
    """Records with binary features and hidden quality; one feature secretly drives quality.

    Principles reach features through ``[Pk]`` tokens in their text. A record is
    kept when it passes at least ``threshold`` principles. The validation score
    is the mean hidden quality of the kept validation records plus Gaussian
    noise; the test score does the same on a disjoint held-out pool.
    """

    topic_id = "data_engineering"
    synthetic = True

    def __init__(
        self,
        records: Sequence[FilterRecord],
        test_records: Sequence[FilterRecord],
        catalog: Mapping[str, str],
        driver: str,
        sigma: float = 0.02,
        margin: float | None = None,
        test_sentinel: float | None = None,
        seed: int = 0,
    ):
        if driver not in catalog:
            raise EnvError(f"driver {driver!r} is not in the predicate catalog")
        if sigma < 0:
            raise EnvError("noise sigma must be non-negative")
        if not records or not test_records:
            raise EnvError("both record pools must be non-empty")
        if {r.id for r in records} & {r.id for r in test_records}:
            raise EnvError("validation and test pools must be disjoint")
        for r in list(records) + list(test_records):
            if not 0.0 <= r.quality <= 1.0:
                raise EnvError(f"record {r.id}: quality {r.quality} outside [0, 1]")
        self.records = tuple(records)
        self.test_records = tuple(test_records)
        self.catalog = dict(catalog)
        self.driver = driver
        self.sigma = sigma
        self.margin = margin
        self.test_sentinel = test_sentinel
        self.seed = seed
        self.benchmarks = (
            BenchmarkInfo("quality_val", "validation"),
            BenchmarkInfo("quality_test", "test"),
        )
        self._check()

    @classmethod
    def generate(
        cls,
        n: int = 1000,
        n_test: int = 1000,
        margin: float = 0.3,
        sigma: float = 0.02,
        seed: int = 0,
        catalog_size: int = 8,
        driver: str = "P1",
        effects: Mapping[str, float] | None = None,
        base: float = 0.3,
        jitter: float = 0.04,
        test_sentinel: float | None = None,
    ) -> "PlantedFilterEnv":
        """Build a world where keeping only driver records lifts mean quality by exactly ``margin``.

        ``effects`` adds fixed quality shifts for other principles (a negative
        value makes a harmful decoy). The driver's shift is solved for so that,
        on the validation pool, mean(q | driver) - mean(q) equals ``margin``.
        """
        effects = dict({"P3": -0.1} if effects is None else effects)
        catalog = {f"P{k}": f"f{k}" for k in range(1, catalog_size + 1)}
        if driver not in catalog or any(pid not in catalog for pid in effects):
            raise EnvError(f"driver and effects must name principles P1..P{catalog_size}")
        if driver in effects:
            raise EnvError("the driver's effect is calibrated, not configured")
        rng = rng_for(seed, "planted-filter", "records")

        def draw(prefix: str, count: int) -> list[tuple[str, frozenset[str], float]]:
            rows = []
            for k in range(count):
                feats = frozenset(f for f in catalog.values() if rng.random() < 0.5)
                q = base + rng.uniform(-jitter, jitter)
                q += sum(e for pid, e in effects.items() if catalog[pid] in feats)
                rows.append((f"{prefix}{k:05d}", feats, q))
            return rows

        val, test = draw("v", n), draw("t", n_test)
        fd = catalog[driver]
        in_d = [q for _, f, q in val if fd in f]
        if not in_d or len(in_d) == n:
            raise EnvError("driver feature must split the validation pool")
        gap = sum(in_d) / len(in_d) - sum(q for _, _, q in val) / n
        delta = (margin - gap) / (1 - len(in_d) / n)

        def finish(rows):
            out = []
            for rid, feats, q in rows:
                q = q + (delta if fd in feats else 0.0)
                instruction, response = _synth_text(rng, q)
                out.append(FilterRecord(rid, feats, q, instruction, response))
            return out

        return cls(finish(val), finish(test), catalog, driver, sigma, margin, test_sentinel, seed)

    # -- spec files --------------------------------------------------------

    def to_spec(self) -> dict:
        return {
            "kind": "planted_filter",
            "catalog": self.catalog,
            "driver": self.driver,
            "sigma": self.sigma,
            "margin": self.margin,
            "test_sentinel": self.test_sentinel,
            "seed": self.seed,
            "records": [r.to_dict() for r in self.records],
            "test_records": [r.to_dict() for r in self.test_records],
        }

    # -- behaviour ---------------------------------------------------------

    def trivial_method(self) -> dict:
        return {"topic_id": self.topic_id, "paradigm": "identity", "params": {"note": "keep every record"}}

    def ground_truth(self) -> GroundTruth:
        return GroundTruth("planted_driver", self.driver, _marker("driver", self.driver, self.seed, len(self.records)))

    def resolve(self, principles: Sequence[str]) -> tuple[list[str | None], list[str]]:
        """Feature name (or None) per principle, plus warnings for unresolved ones."""
        feats: list[str | None] = []
        warnings = []
        for k, text in enumerate(principles):
            m = PRINCIPLE_TOKEN.search(text)
            pid = m.group(1) if m else None
            if pid is None or pid not in self.catalog:
                warnings.append(f"principle {k + 1} does not resolve to a known predicate; it never passes")
                feats.append(None)
            else:
                feats.append(self.catalog[pid])
        return feats, warnings

    @staticmethod
    def _passes(record: FilterRecord, feats: Sequence[str | None]) -> int:
        return sum(1 for f in feats if f is not None and f in record.features)

    def rate_records(self, principles: Sequence[str], threshold: int, pool: str = "validation") -> list[str]:
        if threshold < 1:
            raise EnvError("threshold must be at least 1")
        feats, warnings = self.resolve(principles)
        for w in warnings:
            log.warning(w)
        records = self.records if pool == "validation" else self.test_records
        return [r.id for r in records if self._passes(r, feats) >= threshold]

    def execute(self, plan: ExperimentPlan, seed: int) -> ExperimentResult:
        self._check_topic(plan)
        feats: list[str | None] | None = None
        threshold: int | None = None
        keep_all = False
        ran = False
        notes: list[str] = []
        for action in plan.actions:
            if action.name == "rate-each-record":
                if "principles" not in action.args:
                    raise EnvError("rate-each-record needs principles")
                feats, warnings = self.resolve(action.args["principles"])
                notes.extend(warnings)
            elif action.name == "keep-if-passes":
                if feats is None:
                    raise EnvError("keep-if-passes before any rating")
                threshold = action.args.get("min_passed")
                if not isinstance(threshold, int) or threshold < 1:
                    raise EnvError(f"keep-if-passes needs an integer min_passed >= 1, got {threshold!r}")
            elif action.name == "keep-all":
                keep_all = True
            elif action.name == "run-benchmarks":
                ran = True
            else:
                raise EnvError(f"unknown action {action.name!r}")
        if not ran:
            raise EnvError("plan never runs the benchmarks")
        if not keep_all and threshold is None:
            raise EnvError("plan neither filters nor keeps all records")

        def select(pool):
            if keep_all and threshold is None:
                return [(r, self._passes(r, feats) if feats else 0) for r in pool]
            rated = [(r, self._passes(r, feats)) for r in pool]
            return [(r, p) for r, p in rated if p >= threshold]

        kept = select(self.records)
        kept_test = select(self.test_records)
        if not kept or not kept_test:
            return ExperimentResult.failure("no record passed the filter", logs="\n".join(notes))

        rng = rng_for(seed, "planted-filter", "noise", plan.source_digest)
        val = math.fsum(r.quality for r, _ in kept) / len(kept) + rng.gauss(0.0, self.sigma)
        test = math.fsum(r.quality for r, _ in kept_test) / len(kept_test) + rng.gauss(0.0, self.sigma)
        if self.test_sentinel is not None:
            test = self.test_sentinel
        samples = [Sample(r.id, r.instruction, r.response, float(p)) for r, p in kept]
        ids = "\n".join(r.id for r, _ in kept)
        notes.append(f"kept {len(kept)} of {len(self.records)} records")
        return ExperimentResult(
            benchmark_scores={
                "quality_val": BenchmarkScore("quality_val", val, "validation"),
                "quality_test": BenchmarkScore("quality_test", test, "test"),
            },
            metric_values=corpus_metrics(samples),
            artifacts={"kept": len(kept), "subset_digest": hashlib.sha256(ids.encode()).hexdigest()},
            logs="\n".join(notes),
        )


# -- parameter surface -----------------------------------------------------------

LM_DEFAULTS = {
    "n_layer": 6,
    "n_head": 6,
    "dropout": 0.2,
    "activation": "gelu",
    "learning_rate": 0.001,
    "lr_schedule": "cosine",
    "weight_decay": 0.1,
}

LM_OPTIMUM = {
    "n_layer": 8,
    "n_head": 12,
    "dropout": 0.05,
    "activation": "swiglu",
    "learning_rate": 0.003,
    "lr_schedule": "cyclical",
    "weight_decay": 0.1,
}


@dataclass(frozen=True)
class Bump:
    """Non-negative penalty that is zero only at ``target``."""

    kind: str
    target: Any
    weight: float
    scale: float = 1.0
    table: Mapping[str, float] = field(default_factory=dict)

    def __call__(self, value: Any) -> float:
        if self.kind == "enum":
            return 0.0 if value == self.target else self.weight * self.table.get(value, 1.0)
        if self.kind == "log":
            d = (math.log10(value) - math.log10(self.target)) / self.scale
        else:
            d = (value - self.target) / self.scale
        return self.weight * d * d


def default_bumps(optimum: Mapping[str, Any] = LM_OPTIMUM) -> dict[str, Bump]:
    return {
        "n_layer": Bump("quad", optimum["n_layer"], 0.4, 4.0),
        "n_head": Bump("quad", optimum["n_head"], 0.6, 6.0),
        "dropout": Bump("quad", optimum["dropout"], 0.8, 0.25),
        "activation": Bump("enum", optimum["activation"], 0.3, table={"gelu": 0.5, "relu": 1.0, "swiglu": 1.0}),
        "learning_rate": Bump("log", optimum["learning_rate"], 0.5, 1.0),
        "lr_schedule": Bump("enum", optimum["lr_schedule"], 0.25, table={"cosine": 0.6, "constant": 1.0, "cyclical": 1.0}),
        "weight_decay": Bump("quad", optimum["weight_decay"], 0.2, 0.2),
    }


class ParamSurfaceEnv(Environment):
    """Perplexity-like surface over training configurations (lower is better)."""

    topic_id = "language_modeling"
    synthetic = True

    def __init__(
        self,
        floor: float = 3.2,
        sigma: float = 0.01,
        bumps: Mapping[str, Bump] | None = None,
        test_shift: float = 0.08,
        seed: int = 0,
    ):
        self.floor = floor
        self.sigma = sigma
        self.bumps = dict(bumps or default_bumps())
        self.test_shift = test_shift
        self.seed = seed
        self.benchmarks = (
            BenchmarkInfo("perplexity_val", "validation", higher_is_better=False),
            BenchmarkInfo("perplexity_test", "test", higher_is_better=False),
        )
        self._check()

    @property
    def optimum(self) -> dict:
        return {name: b.target for name, b in sorted(self.bumps.items())}

    def surface(self, params: Mapping[str, Any]) -> float:
        missing = set(self.bumps) - set(params)
        if missing:
            raise EnvError(f"configuration lacks {sorted(missing)}")
        return self.floor + math.fsum(b(params[name]) for name, b in sorted(self.bumps.items()))

    def held_out(self, params: Mapping[str, Any]) -> float:
        # the held-out surface is shifted and mildly tilted toward deeper models
        return self.surface(params) + self.test_shift + 0.01 * abs(params["n_layer"] - self.bumps["n_layer"].target)

    def trivial_method(self) -> dict:
        return {"topic_id": self.topic_id, "paradigm": "configure_and_train", "params": dict(LM_DEFAULTS)}

    def ground_truth(self) -> GroundTruth:
        return GroundTruth("surface_optimum", self.optimum, _marker("optimum", self.seed, sorted(self.optimum.items())))

    def to_spec(self) -> dict:
        return {"kind": "param_surface", "floor": self.floor, "sigma": self.sigma, "test_shift": self.test_shift, "seed": self.seed}

    def execute(self, plan: ExperimentPlan, seed: int) -> ExperimentResult:
        self._check_topic(plan)
        params: dict[str, Any] = {}
        notes = []
        trained = False
        for action in plan.actions:
            if action.name in ("configure-model", "configure-training"):
                params.update(action.args)
            elif action.name == "train-and-evaluate":
                trained = True
            else:
                raise EnvError(f"unknown action {action.name!r}")
        if not trained:
            raise EnvError("plan never trains the model")
        if params.get("block_patch"):
            notes.append("block_patch supplied; code fragments are not executed")
            params.pop("block_patch")
        rng = rng_for(seed, "param-surface", plan.source_digest)
        val = self.surface(params) + rng.gauss(0.0, self.sigma)
        test = self.held_out(params) + rng.gauss(0.0, self.sigma)
        return ExperimentResult(
            benchmark_scores={
                "perplexity_val": BenchmarkScore("perplexity_val", val, "validation", False),
                "perplexity_test": BenchmarkScore("perplexity_test", test, "test", False),
            },
            metric_values={},
            artifacts={"config": json.loads(json.dumps(params, sort_keys=True))},
            logs="\n".join(notes),
        )


# -- loading -----------------------------------------------------------------------

def build_environment(spec: Mapping[str, Any]) -> Environment:
    """Construct an environment from its JSON spec."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "planted_filter":
            if "records" in spec:
                return PlantedFilterEnv(
                    [FilterRecord.from_dict(r) for r in spec.pop("records")],
                    [FilterRecord.from_dict(r) for r in spec.pop("test_records")],
                    **spec,
                )
            return PlantedFilterEnv.generate(**spec)
        if kind == "param_surface":
            return ParamSurfaceEnv(**spec)
    except TypeError as exc:
        raise EnvError(f"bad environment spec: {exc}") from None
    raise EnvError(f"unknown environment kind {kind!r}")


def load_environment(path: str | Path) -> Environment:
    with open(path, encoding="utf-8") as fh:
        return build_environment(json.load(fh))
