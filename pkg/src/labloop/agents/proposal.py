"""Proposal generation: sampling several candidates and keeping the most novel one."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from ..llm import ChatRequest, Gateway, Message
from ..metrics import words
from ..record import ExpSettings, HistoryView, Proposal
from .prompts import PromptBundle, Templates, TopicContext, default_templates, fmt_score, proposal_prompt


class AgentError(RuntimeError):
    pass


class EnvelopeError(ValueError):
    """A candidate did not follow the labeled-section format."""


@dataclass(frozen=True)
class AgentConfig:
    proposal_candidates: int = 3
    proposal_temperature: float = 0.7
    review_temperature: float = 0.7
    max_iterations: int = 5
    model: str = "default"
    max_tokens: int = 2048
    enable_code_metrics: bool = False

    def __post_init__(self) -> None:
        if self.proposal_candidates < 1:
            raise ValueError("proposal_candidates must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def bigrams(text: str) -> set[tuple[str, str]]:
    toks = words(text)
    return set(zip(toks, toks[1:]))


def jaccard_bigram(a: str, b: str) -> float:
    ba, bb = bigrams(a), bigrams(b)
    if not ba and not bb:
        return 1.0
    if not ba or not bb:
        return 0.0
    return len(ba & bb) / len(ba | bb)


def select_most_diverse(similarities: list[float]) -> int:
    """Index of the smallest similarity; the earliest wins ties."""
    if not similarities:
        raise ValueError("nothing to select from")
    return min(range(len(similarities)), key=lambda k: (similarities[k], k))


SECTIONS = {
    "idea": "idea",
    "methodology": "methodology",
    "dsl": "dsl",
    "experiment settings": "settings",
    "hypothesis": "hypothesis",
    "related feature": "feature",
    "rebuttal": "rebuttal",
}
REQUIRED = ("idea", "methodology", "dsl", "hypothesis", "feature")
_HEADER = re.compile(r"^#{2,4}\s*(.+?)\s*:?\s*$")
_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def _json_block(text: str, what: str) -> Any:
    body = _FENCE.sub("", text.strip()).strip()
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise EnvelopeError(f"{what} section is not valid JSON: {exc}") from None


def parse_envelope(text: str, iteration: int) -> tuple[Proposal, list[str]]:
    """Read a labeled-section proposal. Returns the proposal and any warnings."""
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = _HEADER.match(line)
        if m and m.group(1).lower() in SECTIONS:
            current = SECTIONS[m.group(1).lower()]
            if current in sections:
                raise EnvelopeError(f"section {m.group(1)!r} appears twice")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    body = {k: "\n".join(v).strip() for k, v in sections.items()}
    missing = [k for k in REQUIRED if not body.get(k)]
    if missing:
        raise EnvelopeError(f"missing sections: {', '.join(missing)}")
    dsl = _json_block(body["dsl"], "DSL")
    if not isinstance(dsl, dict):
        raise EnvelopeError("DSL section must be a JSON object")
    settings = ExpSettings(baseline_turn=iteration - 1)
    if body.get("settings"):
        raw = _json_block(body["settings"], "Experiment Settings")
        if not isinstance(raw, dict):
            raise EnvelopeError("Experiment Settings must be a JSON object")
        bt = raw.get("baseline_turn", iteration - 1)
        if not isinstance(bt, int) or isinstance(bt, bool) or not 0 <= bt < iteration:
            raise EnvelopeError(f"baseline_turn {bt!r} must name an earlier turn (0..{iteration - 1})")
        opts = raw.get("options", {})
        if not isinstance(opts, dict):
            raise EnvelopeError("options must be a JSON object")
        settings = ExpSettings(bt, opts)
    warnings = []
    rebuttal = body.get("rebuttal") or None
    if iteration == 1 and rebuttal is not None:
        warnings.append("rebuttal supplied at the first iteration was dropped")
        rebuttal = None
    if iteration > 1 and rebuttal is None:
        raise EnvelopeError("missing sections: rebuttal")
    prop = Proposal(
        idea=body["idea"],
        methodology_text=body["methodology"],
        methodology_dsl=dsl,
        exp_settings=settings,
        hypothesis=body["hypothesis"],
        related_feature=body["feature"],
        rebuttal=rebuttal,
    )
    return prop, warnings


def prompt_variables(view: HistoryView, iteration: int, thread: int) -> dict[str, Any]:
    """Values scripted responses may substitute. Validation scores only."""
    out: dict[str, Any] = {"iteration": iteration, "thread": thread, "prev_iteration": iteration - 1}
    last = view.last
    if last.result.ok:
        for name, s in last.result.scores("validation").items():
            out[f"prev_{name}"] = fmt_score(s.value)
    return out


@dataclass
class ProposalOutcome:
    proposal: Proposal
    warnings: list[str] = field(default_factory=list)
    similarities: list[float] = field(default_factory=list)
    chosen: int = 0
    prompt: PromptBundle | None = None


def _messages(bundle: PromptBundle) -> tuple[Message, ...]:
    return (Message("system", bundle.system), Message("user", bundle.user))


def propose(
    topic: TopicContext,
    view: HistoryView,
    config: AgentConfig,
    gateway: Gateway,
    iteration: int,
    thread: int,
    phase: str = "pre_falsification",
    attempt: str = "",
    templates: Templates | None = None,
    on_prompt: Callable[[str, str], None] | None = None,
) -> ProposalOutcome:
    """Sample ``proposal_candidates`` proposals and keep the one least like the previous methodology."""
    tpl = templates or default_templates()
    bundle = proposal_prompt(topic, view, tpl)
    variables = prompt_variables(view, iteration, thread)
    base = f"proposal/{iteration}/{thread}"
    prev = view.proposals[-1].methodology_text if view.proposals else ""
    parsed: list[tuple[int, Proposal]] = []
    warnings: list[str] = []
    for k in range(1, config.proposal_candidates + 1):
        key = f"{base}/candidate-{k}{attempt}"
        req = ChatRequest(_messages(bundle), config.proposal_temperature, config.model, config.max_tokens, key, variables)
        if on_prompt:
            on_prompt(key, bundle.system + "\n" + bundle.user)
        text = gateway.complete(req, phase).text
        try:
            prop, w = parse_envelope(text, iteration)
        except EnvelopeError as first:
            repair_user = tpl.render("repair", error=str(first), proposal=text)
            rkey = f"{key}/repair"
            msgs = (*_messages(bundle), Message("assistant", text), Message("user", repair_user))
            if on_prompt:
                on_prompt(rkey, repair_user)
            rtext = gateway.complete(
                ChatRequest(msgs, config.proposal_temperature, config.model, config.max_tokens, rkey, variables), phase
            ).text
            try:
                prop, w = parse_envelope(rtext, iteration)
            except EnvelopeError as second:
                warnings.append(f"candidate {k} unparseable after repair: {second}")
                continue
            w = [f"candidate {k} needed a repair: {first}", *w]
        warnings.extend(w)
        parsed.append((k, prop))
    if not parsed:
        raise AgentError(f"no usable proposal for iteration {iteration}, thread {thread}: {'; '.join(warnings)}")
    sims = [jaccard_bigram(p.methodology_text, prev) for _, p in parsed]
    idx = select_most_diverse(sims)
    return ProposalOutcome(parsed[idx][1], warnings, sims, parsed[idx][0], bundle)
