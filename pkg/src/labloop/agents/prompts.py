"""Prompt templates and the text renderings agents see.

Templates are plain text files with ``{name}`` placeholders drawn from a fixed
set. Only validation-split scores are ever rendered.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..dsl import Grammar
from ..record import ExperimentResult, HistoryView, Proposal, TurnRecord

PLACEHOLDERS = frozenset(
    {"topic", "history", "dsl_schema", "review", "proposal", "results", "metric", "candidate", "trials", "error"}
)

TEMPLATE_NAMES = (
    "proposal_system",
    "proposal",
    "repair",
    "review_system",
    "metric_gen",
    "metric_analysis",
    "merge",
    "proposal_review",
    "falsification_system",
    "candidates",
    "plans",
    "verdict",
)

_FIELD = re.compile(r"\{([a-z_]+)\}")


class TemplateError(ValueError):
    pass


class Templates:
    def __init__(self, texts: Mapping[str, str]):
        missing = set(TEMPLATE_NAMES) - set(texts)
        if missing:
            raise TemplateError(f"missing templates: {sorted(missing)}")
        for name, text in texts.items():
            unknown = set(_FIELD.findall(text)) - PLACEHOLDERS
            if unknown:
                raise TemplateError(f"template {name!r} uses unknown placeholders {sorted(unknown)}")
        self._texts = dict(texts)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "Templates":
        if directory is None:
            root = resources.files("labloop.agents") / "templates"
            texts = {n: (root / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}
        else:
            d = Path(directory)
            texts = {p.stem: p.read_text(encoding="utf-8") for p in sorted(d.glob("*.txt"))}
        return cls(texts)

    def render(self, name: str, **values: str) -> str:
        text = self._texts[name]
        used = set(_FIELD.findall(text))
        absent = used - set(values)
        if absent:
            raise TemplateError(f"template {name!r} needs values for {sorted(absent)}")
        return _FIELD.sub(lambda m: values[m.group(1)], text).strip()


_DEFAULT: Templates | None = None


def default_templates() -> Templates:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Templates.load()
    return _DEFAULT


@dataclass(frozen=True)
class TopicContext:
    """What agents know about the research topic."""

    topic_id: str
    description: str
    grammar: Grammar
    validation_benchmarks: tuple[tuple[str, bool], ...]

    def render(self) -> str:
        lines = [f"{self.topic_id}: {self.description}", "Validation benchmarks:"]
        for name, hib in self.validation_benchmarks:
            lines.append(f"- {name} ({'higher' if hib else 'lower'} is better)")
        return "\n".join(lines)

    def dsl_schema(self) -> str:
        return json.dumps(self.grammar.to_dict(), indent=1, sort_keys=True)


def topic_context(grammar: Grammar, benchmarks: Iterable[Any]) -> TopicContext:
    vals = tuple((b.name, b.higher_is_better) for b in benchmarks if b.split == "validation")
    return TopicContext(grammar.topic_id, grammar.description, grammar, vals)


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    history: str
    stage: str


def fmt_score(x: float) -> str:
    return f"{x:.4f}"


def render_scores(result: ExperimentResult) -> str:
    """Validation scores only."""
    if not result.ok:
        return f"experiment failed: {result.failure_reason}"
    vals = result.scores("validation")
    return ", ".join(f"{n}={fmt_score(s.value)}" for n, s in sorted(vals.items())) or "no validation scores"


def _compact(value: Any) -> str:
    if isinstance(value, Mapping):
        keep = {k: v for k, v in value.items() if k in ("n", "mean", "min", "max", "best", "worst")}
        return ", ".join(f"{k}={_compact(v)}" for k, v in keep.items()) if keep else json.dumps(value, sort_keys=True)
    if isinstance(value, float):
        return fmt_score(value)
    if isinstance(value, list):
        return "[" + ", ".join(_compact(v) for v in value) + "]"
    return str(value)


def render_metric(result: ExperimentResult, name: str) -> str:
    value = result.metric_values.get(name)
    if isinstance(value, Mapping) and value and all(isinstance(v, Mapping) for v in value.values()):
        return "; ".join(f"{k}: {_compact(v)}" for k, v in sorted(value.items()))
    return _compact(value)


def render_results(result: ExperimentResult) -> str:
    lines = [f"Validation scores: {render_scores(result)}"]
    for name in sorted(result.metric_values):
        lines.append(f"Metric {name}: {render_metric(result, name)}")
    return "\n".join(lines)


def render_dsl(dsl: Any) -> str:
    raw = dsl.to_dict() if hasattr(dsl, "to_dict") else dsl
    return json.dumps(raw, sort_keys=True)


def render_proposal(p: Proposal) -> str:
    parts = [
        f"Idea: {p.idea}",
        f"Methodology: {p.methodology_text}",
        f"DSL: {render_dsl(p.methodology_dsl)}",
        f"Hypothesis: {p.hypothesis}",
        f"Related feature: {p.related_feature}",
    ]
    if p.rebuttal:
        parts.append(f"Rebuttal: {p.rebuttal}")
    return "\n".join(parts)


def render_turn(t: TurnRecord) -> str:
    if t.iteration == 0:
        return f"Turn 0 (trivial method): {render_scores(t.result)}"
    lines = [f"Turn {t.iteration}:"]
    if t.proposal is not None:
        lines.append(render_proposal(t.proposal))
    lines.append(f"Results: {render_scores(t.result)}")
    if t.review is not None:
        lines.append(f"Results review: {t.review.exp_results_review}")
        lines.append(f"Proposal review: {t.review.proposal_review}")
    return "\n".join(lines)


def render_history(view: HistoryView) -> str:
    """Empty for the first iteration; otherwise turn 0 plus each ancestor turn."""
    if not view.turns:
        return ""
    return "\n\n".join(render_turn(t) for t in (view.turn_zero, *view.turns))


def proposal_prompt(topic: TopicContext, view: HistoryView, templates: Templates | None = None) -> PromptBundle:
    tpl = templates or default_templates()
    history = render_history(view)
    user = tpl.render(
        "proposal",
        topic=topic.render(),
        dsl_schema=topic.dsl_schema(),
        history=history or "(none yet; this is the first iteration)",
    )
    return PromptBundle(tpl.render("proposal_system"), user, history, "proposal")
