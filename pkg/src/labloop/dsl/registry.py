"""Grammar registry and the catalog of cross-parameter predicates."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

from .model import Grammar, GrammarError


def _le_len(a: Any, b: Any) -> bool:
    return a <= len(b)


def _le(a: Any, b: Any) -> bool:
    return a <= b


def _lt(a: Any, b: Any) -> bool:
    return a < b


def _distinct_items(a: Any) -> bool:
    return len(set(a)) == len(a)


# Predicates referenced by name from grammar files.
PREDICATES: dict[str, tuple[int, Callable[..., bool]]] = {
    "le_len": (2, _le_len),
    "le": (2, _le),
    "lt": (2, _lt),
    "distinct_items": (1, _distinct_items),
}


@dataclass(frozen=True)
class GrammarHandle:
    topic_id: str
    version: int


def check_grammar(grammar: Grammar) -> None:
    """Raise :class:`GrammarError` unless every grammar invariant holds."""
    if not grammar.topic_id or not grammar.topic_id.strip():
        raise GrammarError("grammar topic_id must be non-empty")
    if grammar.version < 1:
        raise GrammarError("grammar version must be >= 1")
    if not grammar.paradigms:
        raise GrammarError(f"grammar {grammar.topic_id!r} declares no paradigms")
    catalog = set(grammar.action_catalog)
    for pname, par in grammar.paradigms.items():
        if not par.params:
            raise GrammarError(f"paradigm {pname!r} has no parameter schemas")
        names = [p.name for p in par.params]
        if len(set(names)) != len(names):
            raise GrammarError(f"paradigm {pname!r} repeats a parameter name")
        for rule in par.rules:
            if rule.predicate not in PREDICATES:
                raise GrammarError(f"rule {rule.name!r}: unknown predicate {rule.predicate!r}")
            arity, _ = PREDICATES[rule.predicate]
            if len(rule.params) != arity:
                raise GrammarError(f"rule {rule.name!r}: predicate {rule.predicate!r} takes {arity} params")
            for p in rule.params:
                if p not in names:
                    raise GrammarError(f"rule {rule.name!r} references unknown parameter {p!r}")
        for act in par.actions:
            if act.action not in catalog:
                raise GrammarError(f"paradigm {pname!r}: action {act.action!r} is not in the action catalog")
            if act.when is not None:
                schema = par.schema(act.when)
                if schema is None or schema.kind != "flag":
                    raise GrammarError(f"action {act.action!r}: 'when' must name a flag parameter")
            for value in act.args.values():
                if isinstance(value, str) and value.startswith("$") and value[1:] not in names:
                    raise GrammarError(f"action {act.action!r} references unknown parameter {value!r}")


class GrammarRegistry:
    """Topic id -> grammar. Entries are write-once; reads are lock-free."""

    def __init__(self, grammars: Iterable[Grammar] = ()):
        self._grammars: dict[str, Grammar] = {}
        self._lock = threading.Lock()
        for g in grammars:
            self.register(g)

    def register(self, grammar: Grammar) -> GrammarHandle:
        check_grammar(grammar)
        with self._lock:
            if grammar.topic_id in self._grammars:
                raise GrammarError(f"topic {grammar.topic_id!r} is already registered")
            # copy-on-write keeps concurrent readers on a consistent dict
            updated = dict(self._grammars)
            updated[grammar.topic_id] = grammar
            self._grammars = updated
        return GrammarHandle(grammar.topic_id, grammar.version)

    def get(self, topic_id: str) -> Grammar:
        try:
            return self._grammars[topic_id]
        except KeyError:
            raise GrammarError(f"no grammar registered for topic {topic_id!r}") from None

    def __contains__(self, topic_id: str) -> bool:
        return topic_id in self._grammars

    def topics(self) -> list[str]:
        return sorted(self._grammars)


def load_grammar(path: str | Path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return Grammar.from_dict(json.load(fh))


BUILTIN_TOPICS = ("data_engineering", "self_instruct", "language_modeling")


def builtin_grammars() -> list[Grammar]:
    root = resources.files("labloop.dsl") / "grammars"
    out = []
    for topic in BUILTIN_TOPICS:
        out.append(Grammar.from_dict(json.loads((root / f"{topic}.json").read_text(encoding="utf-8"))))
    return out


def default_registry() -> GrammarRegistry:
    return GrammarRegistry(builtin_grammars())
