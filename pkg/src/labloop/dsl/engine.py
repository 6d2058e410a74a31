"""Validation and interpretation of DSL documents."""

from __future__ import annotations

import math
from typing import Any, Mapping

from .model import (
    NL_MAX_CHARS,
    Diagnostic,
    DslDocument,
    DslValidationError,
    ExperimentPlan,
    Grammar,
    InterpretationError,
    ParamSchema,
    PlanAction,
)
from .registry import PREDICATES, GrammarRegistry


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_text(value: Any, path: str, c: Mapping[str, Any], out: list[Diagnostic]) -> None:
    if not isinstance(value, str):
        out.append(Diagnostic(path, "type_mismatch", f"expected text, got {type(value).__name__}"))
        return
    lo = c.get("min_length", 1)
    hi = min(c.get("max_length", NL_MAX_CHARS), NL_MAX_CHARS)
    if not lo <= len(value) <= hi:
        out.append(Diagnostic(path, "constraint", f"text length {len(value)} outside [{lo}, {hi}]"))


def _check_param(schema: ParamSchema, value: Any, path: str) -> tuple[list[Diagnostic], Any]:
    out: list[Diagnostic] = []
    c = schema.constraints
    kind = schema.kind
    if kind in ("natural_language_text", "code_fragment"):
        _check_text(value, path, c, out)
    elif kind == "natural_language_list":
        if not isinstance(value, (list, tuple)):
            out.append(Diagnostic(path, "type_mismatch", f"expected list of texts, got {type(value).__name__}"))
            return out, value
        lo, hi = c.get("min_items", 0), c.get("max_items")
        if len(value) < lo or (hi is not None and len(value) > hi):
            out.append(Diagnostic(path, "constraint", f"list length {len(value)} outside [{lo}, {hi}]"))
        for k, item in enumerate(value):
            _check_text(item, f"{path}[{k}]", {}, out)
        value = tuple(value)
    elif kind == "integer":
        if not _is_int(value):
            out.append(Diagnostic(path, "type_mismatch", f"expected integer, got {type(value).__name__}"))
            return out, value
    elif kind == "real":
        if not _is_real(value) or not math.isfinite(value):
            out.append(Diagnostic(path, "type_mismatch", f"expected finite real, got {value!r}"))
            return out, value
        value = float(value)
    elif kind == "flag":
        if not isinstance(value, bool):
            out.append(Diagnostic(path, "type_mismatch", f"expected flag, got {type(value).__name__}"))
    elif kind == "enum":
        if not isinstance(value, str):
            out.append(Diagnostic(path, "type_mismatch", f"expected enum token, got {type(value).__name__}"))
        elif value not in c["allowed"]:
            out.append(Diagnostic(path, "constraint", f"{value!r} not in {list(c['allowed'])}"))
    if kind in ("integer", "real") and not out:
        if "min" in c and value < c["min"]:
            out.append(Diagnostic(path, "constraint", f"{value} < minimum {c['min']}"))
        if "max" in c and value > c["max"]:
            out.append(Diagnostic(path, "constraint", f"{value} > maximum {c['max']}"))
    return out, value


def validate(raw: Mapping[str, Any], grammar: Grammar) -> DslDocument:
    """Check a raw document tree against ``grammar``.

    Returns a :class:`DslDocument` or raises :class:`DslValidationError`
    carrying one diagnostic per violated rule.
    """
    diags: list[Diagnostic] = []
    if not isinstance(raw, Mapping):
        raise DslValidationError([Diagnostic("$", "type_mismatch", "document must be an object")])
    topic = raw.get("topic_id", grammar.topic_id)
    if topic != grammar.topic_id:
        diags.append(Diagnostic("topic_id", "unknown_topic", f"{topic!r} does not match grammar {grammar.topic_id!r}"))
    pname = raw.get("paradigm")
    paradigm = grammar.paradigm(pname) if isinstance(pname, str) else None
    if paradigm is None:
        diags.append(Diagnostic("paradigm", "unknown_paradigm", f"{pname!r} is not one of {sorted(grammar.paradigms)}"))
        raise DslValidationError(diags)
    params = raw.get("params", {})
    if not isinstance(params, Mapping):
        diags.append(Diagnostic("params", "type_mismatch", "params must be an object"))
        raise DslValidationError(diags)

    clean: dict[str, Any] = {}
    ok: set[str] = set()
    for schema in paradigm.params:
        path = f"params.{schema.name}"
        if schema.name not in params:
            if schema.required:
                diags.append(Diagnostic(path, "missing_required", f"required parameter {schema.name!r} is missing"))
            continue
        found, value = _check_param(schema, params[schema.name], path)
        diags.extend(found)
        clean[schema.name] = value
        if not found:
            ok.add(schema.name)
    for name in params:
        if paradigm.schema(name) is None:
            diags.append(Diagnostic(f"params.{name}", "unknown_parameter", f"{name!r} is not in paradigm {pname!r}"))

    for rule in paradigm.rules:
        if not all(p in ok for p in rule.params):
            continue
        _, fn = PREDICATES[rule.predicate]
        if not fn(*(clean[p] for p in rule.params)):
            diags.append(
                Diagnostic(
                    "params." + ",".join(rule.params),
                    "cross_parameter",
                    f"{rule.name}: {rule.message} ({', '.join(f'{p}={_short(clean[p])}' for p in rule.params)})",
                )
            )
    if diags:
        raise DslValidationError(diags)
    return DslDocument(grammar.topic_id, paradigm.name, clean, grammar.version)


def _short(v: Any) -> str:
    if isinstance(v, tuple):
        return f"<{len(v)} items>"
    return repr(v)


def validate_in(raw: Mapping[str, Any], registry: GrammarRegistry) -> DslDocument:
    topic = raw.get("topic_id") if isinstance(raw, Mapping) else None
    if topic not in registry:
        raise DslValidationError([Diagnostic("topic_id", "unknown_topic", f"no grammar registered for {topic!r}")])
    return validate(raw, registry.get(topic))


def _resolve(value: Any, doc: DslDocument) -> tuple[bool, Any]:
    if isinstance(value, str) and value.startswith("$"):
        name = value[1:]
        if name not in doc.params:
            return False, None
        return True, doc.params[name]
    return True, value


def interpret(doc: DslDocument, registry: GrammarRegistry) -> ExperimentPlan:
    """Map a validated document to the ordered action list of its paradigm."""
    grammar = registry.get(doc.topic_id)
    if grammar.version != doc.grammar_version:
        raise InterpretationError(
            f"document was validated against {doc.topic_id} v{doc.grammar_version}, registry holds v{grammar.version}"
        )
    paradigm = grammar.paradigm(doc.paradigm)
    if paradigm is None:
        raise InterpretationError(f"paradigm {doc.paradigm!r} unknown to {doc.topic_id} v{grammar.version}")
    catalog = set(grammar.action_catalog)
    actions = []
    for tmpl in paradigm.actions:
        if tmpl.action not in catalog:
            raise InterpretationError(f"action {tmpl.action!r} outside the catalog")
        if tmpl.when is not None and not doc.params.get(tmpl.when, False):
            continue
        args = {}
        for key, value in tmpl.args.items():
            present, resolved = _resolve(value, doc)
            if present:
                args[key] = resolved
        actions.append(PlanAction(tmpl.action, args))
    return ExperimentPlan(doc.topic_id, tuple(actions), doc, doc.digest())
