"""Staged review: new metrics, one analysis per metric, a merge, then a proposal review."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

from ..llm import ChatRequest, Gateway, Message
from ..metrics import BUILTIN_METRICS, MetricError, MetricSpec
from ..record import ExperimentResult, HistoryView, Proposal, Review
from .prompts import (
    Templates,
    TopicContext,
    default_templates,
    fmt_score,
    render_history,
    render_proposal,
    render_results,
    render_scores,
)
from .proposal import AgentConfig, AgentError


def propose_custom_metrics(text: str, enable_code: bool = False) -> tuple[list[MetricSpec], list[str]]:
    """Turn a metric-generation response into specs. Bad output gives an empty list and a warning."""
    warnings: list[str] = []
    try:
        data = json.loads(text)
        items = data["metrics"] if isinstance(data, dict) else None
        if not isinstance(items, list):
            raise ValueError("expected an object with a 'metrics' list")
    except (ValueError, KeyError, TypeError) as exc:
        return [], [f"metric suggestions unparseable: {exc}"]
    specs: list[MetricSpec] = []
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("name"), str):
            warnings.append(f"metric suggestion {item!r} has no name; dropped")
            continue
        name = item["name"]
        fragment = item.get("code_fragment")
        try:
            if name in BUILTIN_METRICS:
                specs.append(MetricSpec(name, BUILTIN_METRICS[name]))
            elif isinstance(fragment, str) and fragment.strip():
                level = item.get("level", "sample")
                specs.append(MetricSpec(name, level, "agent_generated", fragment, active=enable_code))
            else:
                warnings.append(f"metric {name!r} is neither builtin nor backed by a code fragment; dropped")
        except MetricError as exc:
            warnings.append(f"metric {name!r} rejected: {exc}")
    return specs, warnings


@dataclass
class ReviewOutcome:
    review: Review
    metric_specs: list[MetricSpec] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    calls: int = 0


def review_variables(result: ExperimentResult, iteration: int, thread: int) -> dict[str, Any]:
    out: dict[str, Any] = {"iteration": iteration, "thread": thread, "prev_iteration": iteration - 1}
    for name, s in result.scores("validation").items():
        out[name] = fmt_score(s.value)
    return out


def review(
    topic: TopicContext,
    proposal: Proposal,
    result: ExperimentResult,
    view: HistoryView,
    config: AgentConfig,
    gateway: Gateway,
    iteration: int,
    thread: int,
    phase: str = "pre_falsification",
    templates: Templates | None = None,
    on_prompt: Callable[[str, str], None] | None = None,
) -> ReviewOutcome:
    if not result.ok:
        raise ValueError("only successful experiments are reviewed")
    tpl = templates or default_templates()
    system = tpl.render("review_system")
    base = f"review/{iteration}/{thread}"
    variables = review_variables(result, iteration, thread)
    results_text = render_results(result)
    topic_text = topic.render()
    calls = 0

    def ask(step: str, user: str) -> str:
        nonlocal calls
        key = f"{base}/{step}"
        if on_prompt:
            on_prompt(key, system + "\n" + user)
        req = ChatRequest((Message("system", system), Message("user", user)), config.review_temperature,
                          config.model, config.max_tokens, key, variables)
        calls += 1
        return gateway.complete(req, phase).text.strip()

    specs, warnings = propose_custom_metrics(
        ask("metrics", tpl.render("metric_gen", topic=topic_text, results=results_text)),
        config.enable_code_metrics,
    )
    analyses: dict[str, str] = {}
    for name in sorted(result.metric_values):
        analyses[name] = ask(
            f"metric-{name}", tpl.render("metric_analysis", topic=topic_text, metric=name, results=results_text)
        )
    if analyses:
        merged_input = "\n".join(f"[{n}] {a}" for n, a in analyses.items())
    else:
        warnings.append("no metrics to analyse; the review rests on benchmark scores alone")
        merged_input = f"Benchmark scores only: {render_scores(result)}"
    exp_review = ask("merge", tpl.render("merge", topic=topic_text, results=results_text, review=merged_input))
    prop_review = ask(
        "proposal-review",
        tpl.render(
            "proposal_review",
            topic=topic_text,
            history=render_history(view) or "(none)",
            proposal=render_proposal(proposal),
            review=exp_review,
        ),
    )
    if not exp_review or not prop_review:
        raise AgentError(f"review for iteration {iteration}, thread {thread} came back empty")
    return ReviewOutcome(Review(exp_review, prop_review, analyses), specs, warnings, calls)
