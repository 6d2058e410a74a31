"""Value types for grammars, DSL documents and experiment plans."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

PARAM_KINDS = (
    "natural_language_text",
    "natural_language_list",
    "integer",
    "real",
    "flag",
    "enum",
    "code_fragment",
)

NL_MAX_CHARS = 8192


class GrammarError(ValueError):
    """Raised for malformed grammar definitions or registry misuse."""


@dataclass(frozen=True)
class Diagnostic:
    path: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: [{self.rule}] {self.message}"


class DslValidationError(ValueError):
    """A document failed validation. ``diagnostics`` lists every violated rule."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))

    @property
    def rules(self) -> set[str]:
        return {d.rule for d in self.diagnostics}


class DslParseError(ValueError):
    """Canonical text could not be parsed. ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class InterpretationError(RuntimeError):
    """A validated document could not be interpreted (grammar/interpreter mismatch)."""


@dataclass(frozen=True)
class ParamSchema:
    name: str
    kind: str
    required: bool = True
    constraints: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name or not self.name.isidentifier():
            raise GrammarError(f"parameter name {self.name!r} is not an identifier")
        if self.kind not in PARAM_KINDS:
            raise GrammarError(f"parameter {self.name!r}: unknown kind {self.kind!r}")
        c = self.constraints
        for lo, hi in (("min", "max"), ("min_items", "max_items"), ("min_length", "max_length")):
            if lo in c and hi in c and c[lo] > c[hi]:
                raise GrammarError(f"parameter {self.name!r}: {lo} > {hi}")
        if self.kind == "enum":
            allowed = c.get("allowed")
            if not allowed:
                raise GrammarError(f"enum parameter {self.name!r} needs at least one allowed value")
            if len(set(allowed)) != len(allowed):
                raise GrammarError(f"enum parameter {self.name!r} repeats an allowed value")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "required": self.required,
            "constraints": dict(self.constraints),
        }


@dataclass(frozen=True)
class CrossRule:
    """A named predicate over several parameters of one paradigm."""

    name: str
    predicate: str
    params: tuple[str, ...]
    message: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "predicate": self.predicate,
            "params": list(self.params),
            "message": self.message,
        }


@dataclass(frozen=True)
class ActionTemplate:
    """One abstract plan action; ``args`` values of the form ``$param`` are resolved."""

    action: str
    args: Mapping[str, Any] = field(default_factory=dict)
    when: str | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"action": self.action, "args": dict(self.args)}
        if self.when is not None:
            out["when"] = self.when
        return out


@dataclass(frozen=True)
class Paradigm:
    name: str
    params: tuple[ParamSchema, ...]
    rules: tuple[CrossRule, ...] = ()
    actions: tuple[ActionTemplate, ...] = ()

    def schema(self, name: str) -> ParamSchema | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]


@dataclass(frozen=True)
class Grammar:
    topic_id: str
    version: int
    paradigms: Mapping[str, Paradigm]
    action_catalog: tuple[str, ...]
    description: str = ""

    def paradigm(self, name: str) -> Paradigm | None:
        return self.paradigms.get(name)

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "version": self.version,
            "description": self.description,
            "action_catalog": list(self.action_catalog),
            "paradigms": {
                name: {
                    "params": [p.to_dict() for p in par.params],
                    "rules": [r.to_dict() for r in par.rules],
                    "actions": [a.to_dict() for a in par.actions],
                }
                for name, par in self.paradigms.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Grammar":
        try:
            paradigms = {}
            for pname, pdata in data["paradigms"].items():
                paradigms[pname] = Paradigm(
                    name=pname,
                    params=tuple(
                        ParamSchema(
                            name=p["name"],
                            kind=p["kind"],
                            required=bool(p.get("required", True)),
                            constraints=dict(p.get("constraints", {})),
                        )
                        for p in pdata["params"]
                    ),
                    rules=tuple(
                        CrossRule(r["name"], r["predicate"], tuple(r["params"]), r.get("message", r["name"]))
                        for r in pdata.get("rules", [])
                    ),
                    actions=tuple(
                        ActionTemplate(a["action"], dict(a.get("args", {})), a.get("when"))
                        for a in pdata.get("actions", [])
                    ),
                )
            return cls(
                topic_id=data["topic_id"],
                version=int(data.get("version", 1)),
                paradigms=paradigms,
                action_catalog=tuple(data.get("action_catalog", [])),
                description=data.get("description", ""),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise GrammarError(f"malformed grammar definition: {exc}") from exc


def _freeze(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return value


@dataclass(frozen=True)
class DslDocument:
    """A validated methodology under a registered grammar.

    Instances are only produced by :func:`labloop.dsl.validate` (or by parsing
    canonical text); list values are stored as tuples so documents behave as
    values.
    """

    topic_id: str
    paradigm: str
    params: Mapping[str, Any]
    grammar_version: int = 1

    def __post_init__(self) -> None:
        frozen = {k: _freeze(self.params[k]) for k in sorted(self.params)}
        object.__setattr__(self, "params", frozen)

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "paradigm": self.paradigm,
            "grammar_version": self.grammar_version,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_dumps(self.to_dict()).encode("ascii")).hexdigest()


@dataclass(frozen=True)
class PlanAction:
    name: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "args": {k: list(v) if isinstance(v, tuple) else v for k, v in self.args.items()}}


@dataclass(frozen=True)
class ExperimentPlan:
    topic_id: str
    actions: tuple[PlanAction, ...]
    source: DslDocument
    source_digest: str

    @property
    def action_names(self) -> list[str]:
        return [a.name for a in self.actions]

    def action(self, name: str) -> PlanAction | None:
        for a in self.actions:
            if a.name == name:
                return a
        return None

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "actions": [a.to_dict() for a in self.actions],
            "source_digest": self.source_digest,
        }


def canonical_dumps(obj: Any) -> str:
    """Sorted keys, no insignificant whitespace, shortest round-trip floats, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def is_finite_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
