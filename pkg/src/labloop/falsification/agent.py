"""Discovery candidates, single-factor ablation plans, repeated trials, and verdicts."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from ..agents import Templates, TopicContext, default_templates
from ..agents.prompts import render_turn
from ..dsl import DslDocument, DslValidationError, GrammarRegistry, interpret, validate_in
from ..envs import EnvError, Environment
from ..llm import ChatRequest, Gateway, LLMError, Message
from ..metrics import rerank_score
from ..record import ExperimentResult, TurnRecord
from ..seeds import derive_seed
from .screening import FlaggedPair
from .stats import welch_t_test

log = logging.getLogger(__name__)

PHASE = "falsification"
DIRECTIONS = ("positive", "negative")
STATUSES = ("verified", "falsified", "inconclusive")

PromptHook = Callable[[str, str], None]


@dataclass(frozen=True)
class DiscoveryCandidate:
    id: str
    key_factor: str
    elements: tuple[str, ...]
    direction: str
    evidence: str
    pair: FlaggedPair

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "key_factor": self.key_factor,
            "elements": list(self.elements),
            "direction": self.direction,
            "evidence": self.evidence,
            "pair": self.pair.to_dict(),
        }


@dataclass(frozen=True)
class AblationPlan:
    candidate_id: str
    index: int
    plan: str
    ablate: tuple[str, ...]
    set_params: Mapping[str, Any]
    baseline_turn: tuple[int, int]
    baseline_dsl: DslDocument
    ablated_dsl: DslDocument
    trials_per_arm: int
    options: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "index": self.index,
            "plan": self.plan,
            "ablate": list(self.ablate),
            "set": dict(self.set_params),
            "baseline_turn": list(self.baseline_turn),
            "baseline_dsl": self.baseline_dsl.to_dict(),
            "ablated_dsl": self.ablated_dsl.to_dict(),
            "trials_per_arm": self.trials_per_arm,
            "options": dict(self.options),
        }


@dataclass
class Chat:
    """Falsification-phase calls share one system prompt and one temperature."""

    gateway: Gateway
    temperature: float = 0.7
    model: str = "default"
    templates: Templates | None = None
    on_prompt: PromptHook | None = None

    @property
    def tpl(self) -> Templates:
        return self.templates or default_templates()

    def ask(self, key: str, user: str, variables: Mapping[str, Any] | None = None) -> str:
        system = self.tpl.render("falsification_system")
        if self.on_prompt:
            self.on_prompt(key, system + "\n" + user)
        req = ChatRequest((Message("system", system), Message("user", user)), self.temperature, self.model,
                          2048, key, dict(variables or {}))
        return self.gateway.complete(req, PHASE).text


def _load_json(text: str) -> Any:
    body = text.strip()
    if body.startswith("```"):
        body = body.strip("`")
        body = body[body.find("\n") + 1:] if "\n" in body else body
    return json.loads(body)


def render_lineage(lineage: Sequence[TurnRecord]) -> str:
    return "\n\n".join(render_turn(t) for t in lineage)


def render_pair(pair: FlaggedPair, lineage: Sequence[TurnRecord]) -> str:
    by_key = {t.key: t for t in lineage}
    a, b = by_key[pair.before], by_key[pair.after]
    parts = []
    for name, d in sorted(pair.deltas.items()):
        va = a.result.benchmark_scores[name].value
        vb = b.result.benchmark_scores[name].value
        parts.append(f"{name} {va:.4f} -> {vb:.4f} ({d:+.4f})")
    return f"Turn {a.iteration} -> turn {b.iteration}: " + "; ".join(parts)


# -- candidates ----------------------------------------------------------------------

def parse_candidates(text: str, pair: FlaggedPair) -> tuple[list[dict], list[str]]:
    try:
        data = _load_json(text)
        items = data["candidates"]
        if not isinstance(items, list):
            raise TypeError("'candidates' is not a list")
    except (ValueError, KeyError, TypeError) as exc:
        return [], [f"candidate response for turn {pair.after[0]} unparseable: {exc}"]
    out, warnings = [], []
    for item in items:
        try:
            factor = item["key_factor"]
            elements = item.get("elements", [])
            direction = item.get("direction", "positive")
            if not isinstance(factor, str) or not factor.strip():
                raise ValueError("empty key_factor")
            if not isinstance(elements, list) or not all(isinstance(e, str) for e in elements):
                raise ValueError("elements must be a list of strings")
            if direction not in DIRECTIONS:
                raise ValueError(f"direction {direction!r}")
            out.append({"key_factor": factor.strip(), "elements": elements, "direction": direction,
                        "evidence": str(item.get("evidence", ""))})
        except (KeyError, TypeError, ValueError) as exc:
            warnings.append(f"candidate dropped: {exc}")
    return out, warnings


def generate_candidates(
    pairs: Sequence[FlaggedPair],
    lineage: Sequence[TurnRecord],
    topic: TopicContext,
    chat: Chat,
    limit: int,
) -> tuple[list[DiscoveryCandidate], list[str]]:
    """At most ``limit`` candidates, taken from pairs in the given (largest change first) order."""
    if not pairs:
        raise ValueError("candidate generation needs at least one flagged pair")
    history = render_lineage(lineage)
    found: list[DiscoveryCandidate] = []
    warnings: list[str] = []
    for pair in pairs:
        if len(found) >= limit:
            break
        key = f"falsification/{pair.after[0]}/{pair.after[1]}/candidates"
        user = chat.tpl.render("candidates", topic=topic.render(), history=history, results=render_pair(pair, lineage))
        items, w = parse_candidates(chat.ask(key, user), pair)
        warnings.extend(w)
        for item in items:
            if len(found) >= limit:
                warnings.append(f"candidate {item['key_factor']!r} beyond the limit of {limit}; dropped")
                continue
            found.append(DiscoveryCandidate(f"c{len(found) + 1}", item["key_factor"], tuple(item["elements"]),
                                            item["direction"], item["evidence"], pair))
    return found, warnings


# -- ablation --------------------------------------------------------------------------

def split_ref(ref: str) -> tuple[str, str | None]:
    param, sep, token = ref.partition(":")
    return param.strip(), (token.strip() or None) if sep else None


def touches(params: Mapping[str, Any], ref: str) -> bool:
    param, token = split_ref(ref)
    if param not in params:
        return False
    if token is None:
        return True
    value = params[param]
    if isinstance(value, (tuple, list)):
        return any(token in str(item) for item in value)
    return token in str(value)


def ablate_params(params: Mapping[str, Any], refs: Sequence[str]) -> dict[str, Any]:
    """Remove what each reference names: matching list items, or the whole parameter."""
    out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
    for ref in refs:
        param, token = split_ref(ref)
        if param not in out:
            continue
        value = out[param]
        if token is not None and isinstance(value, list):
            out[param] = [item for item in value if token not in str(item)]
        else:
            del out[param]
    return out


def baseline_document(turn: TurnRecord, trivial: DslDocument) -> DslDocument | None:
    if turn.iteration == 0:
        return trivial
    if turn.proposal is None or not turn.result.ok or not isinstance(turn.proposal.methodology_dsl, DslDocument):
        return None
    return turn.proposal.methodology_dsl


def plan_ablations(
    candidate: DiscoveryCandidate,
    number: int,
    lineage: Sequence[TurnRecord],
    trivial: DslDocument,
    topic: TopicContext,
    chat: Chat,
    registry: GrammarRegistry,
    max_plans: int,
    trials_per_arm: int,
) -> tuple[list[AblationPlan], list[str]]:
    """Up to ``max_plans`` single-factor ablations of a baseline turn chosen by the agent."""
    warnings: list[str] = []
    usable = {t.iteration: t for t in lineage if baseline_document(t, trivial) is not None}
    if not any(touches(baseline_document(t, trivial).params, e) for t in usable.values() for e in candidate.elements):
        return [], [f"{candidate.id}: factor touches no methodology element; no ablation possible"]
    key = f"falsification/{number}/0/plan"
    user = chat.tpl.render("plans", topic=topic.render(), candidate=_render_candidate(candidate),
                           history=render_lineage(lineage), dsl_schema=topic.dsl_schema())
    try:
        data = _load_json(chat.ask(key, user))
        bt = data["baseline_turn"]
        items = data["plans"]
        if not isinstance(items, list):
            raise TypeError("'plans' is not a list")
    except (ValueError, KeyError, TypeError) as exc:
        return [], [f"{candidate.id}: plan response unparseable: {exc}"]
    if bt not in usable:
        return [], [f"{candidate.id}: baseline turn {bt!r} is not a usable turn on the lineage"]
    base_turn = usable[bt]
    base_doc = baseline_document(base_turn, trivial)
    if len(items) > max_plans:
        warnings.append(f"{candidate.id}: {len(items)} plans proposed, keeping the first {max_plans}")
        items = items[:max_plans]
    allowed = {split_ref(e)[0] for e in candidate.elements}
    plans: list[AblationPlan] = []
    for k, item in enumerate(items, start=1):
        tag = f"{candidate.id} plan {k}"
        try:
            refs = [str(r) for r in item.get("ablate", [])]
            set_params = dict(item.get("set", {}))
            text = str(item.get("plan", ""))
        except (AttributeError, TypeError, ValueError):
            warnings.append(f"{tag}: malformed plan entry; dropped")
            continue
        stray = [r for r in refs if r not in candidate.elements]
        if stray or not refs and not set_params:
            warnings.append(f"{tag}: ablation must name the candidate's own elements (got {refs}); dropped")
            continue
        foreign = sorted(set(set_params) - allowed)
        if foreign:
            warnings.append(f"{tag}: changes parameters {foreign} outside the factor; dropped")
            continue
        params = ablate_params(base_doc.params, refs)
        params.update(set_params)
        raw = {"topic_id": base_doc.topic_id, "paradigm": base_doc.paradigm, "params": params}
        try:
            ablated = validate_in(raw, registry)
        except DslValidationError as exc:
            warnings.append(f"{tag}: ablated methodology is invalid ({exc}); dropped")
            continue
        if ablated == base_doc:
            warnings.append(f"{tag}: ablation leaves the methodology unchanged; dropped")
            continue
        options = base_turn.proposal.exp_settings.options if base_turn.proposal else {}
        plans.append(AblationPlan(candidate.id, k, text, tuple(refs), set_params, base_turn.key, base_doc,
                                  ablated, trials_per_arm, dict(options)))
    return plans, warnings


def _render_candidate(c: DiscoveryCandidate) -> str:
    return (f"{c.key_factor}\nExpected effect of the factor: {c.direction}\n"
            f"Methodology elements: {', '.join(c.elements) or '(none)'}\nEvidence: {c.evidence}")


# -- trials --------------------------------------------------------------------------

@dataclass
class TrialOutcome:
    ablation: list[float]
    baseline: list[float]
    records: list[dict]


def run_trials(plan: AblationPlan, env: Environment, registry: GrammarRegistry, run_seed: int,
               parallelism: int = 4) -> TrialOutcome:
    """``trials_per_arm`` runs of each arm with distinct derived seeds. Failed runs are kept but not scored."""
    arms = {"ablation": interpret(plan.ablated_dsl, registry), "baseline": interpret(plan.baseline_dsl, registry)}
    jobs = [(arm, t) for arm in arms for t in range(1, plan.trials_per_arm + 1)]

    def work(job: tuple[str, int]) -> dict:
        arm, t = job
        seed = derive_seed(run_seed, "trial", plan.candidate_id, plan.index, arm, t)
        try:
            result = env.execute(arms[arm], seed)
            body = result.to_dict()
            score = rerank_score(result) if result.ok else None
        except EnvError as exc:
            body = ExperimentResult.failure(f"environment error: {exc}").to_dict()
            score = None
        return {"candidate_id": plan.candidate_id, "plan": plan.index, "arm": arm, "trial": t,
                "seed": seed, "score": score, "result": body}

    with ThreadPoolExecutor(max_workers=max(1, min(parallelism, len(jobs)))) as pool:
        records = list(pool.map(work, jobs))
    return outcome_from_records(records)


def outcome_from_records(records: Sequence[Mapping[str, Any]]) -> TrialOutcome:
    scores: dict[str, list[float]] = {"ablation": [], "baseline": []}
    for r in records:
        if r["score"] is not None:
            scores[r["arm"]].append(r["score"])
    return TrialOutcome(scores["ablation"], scores["baseline"], [dict(r) for r in records])


# -- verdicts ------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanGate:
    plan: int
    ablation: tuple[float, ...]
    baseline: tuple[float, ...]
    t: float | None
    df: float | None
    p: float | None
    p_opposite: float | None

    @property
    def usable(self) -> bool:
        return self.p is not None

    def to_dict(self) -> dict:
        from .stats import _jsonable

        return {
            "plan": self.plan,
            "ablation": list(self.ablation),
            "baseline": list(self.baseline),
            "t": _jsonable(self.t) if self.t is not None else None,
            "df": self.df,
            "p": self.p,
            "p_opposite": self.p_opposite,
        }


def gate(plan_index: int, ablation: Sequence[float], baseline: Sequence[float], direction: str) -> PlanGate:
    """Test the predicted shift of the ablated arm.

    A positive factor should score lower once removed, so its gate is the
    left tail of (ablation vs baseline); a negative factor uses the right tail.
    """
    if len(ablation) < 2 or len(baseline) < 2:
        return PlanGate(plan_index, tuple(ablation), tuple(baseline), None, None, None, None)
    tail, opposite = ("left", "right") if direction == "positive" else ("right", "left")
    res = welch_t_test(ablation, baseline, tail)
    opp = welch_t_test(ablation, baseline, opposite)
    return PlanGate(plan_index, tuple(ablation), tuple(baseline), res.t, res.df, res.p, opp.p)


def decide(gates: Sequence[PlanGate], judge: bool | None, alpha: float = 0.05) -> str:
    """Verified needs every plan's gate and the judge; either a decisive reversal or a denial falsifies."""
    if judge is None:
        return "inconclusive"
    usable = [g for g in gates if g.usable]
    if judge is False or any(g.p_opposite < alpha for g in usable):
        return "falsified"
    if gates and len(usable) == len(gates) and all(g.p < alpha for g in usable):
        return "verified"
    return "inconclusive"


@dataclass(frozen=True)
class Verdict:
    candidate_id: str
    direction: str
    gates: tuple[PlanGate, ...]
    t: float | None
    df: float | None
    p: float | None
    status: str
    judge: bool | None
    discovery: str
    alpha: float = 0.05

    def to_dict(self) -> dict:
        from .stats import _jsonable

        return {
            "candidate_id": self.candidate_id,
            "direction": self.direction,
            "gates": [g.to_dict() for g in self.gates],
            "t": _jsonable(self.t) if self.t is not None else None,
            "df": self.df,
            "p": self.p,
            "status": self.status,
            "judge": self.judge,
            "discovery": self.discovery,
            "alpha": self.alpha,
        }


def _render_trials(gates: Sequence[PlanGate], plans: Sequence[AblationPlan]) -> str:
    lines = []
    texts = {p.index: p.plan for p in plans}
    for g in gates:
        lines.append(f"Plan {g.plan}: {texts.get(g.plan, '')}")
        lines.append("  ablated arm: " + ", ".join(f"{x:.4f}" for x in g.ablation))
        lines.append("  baseline arm: " + ", ".join(f"{x:.4f}" for x in g.baseline))
        if g.usable:
            lines.append(f"  Welch t={g.t:.4f}, df={g.df:.2f}, p={g.p:.4f} in the predicted direction")
        else:
            lines.append("  too few successful trials for a test")
    return "\n".join(lines)


def verdict(
    candidate: DiscoveryCandidate,
    number: int,
    gates: Sequence[PlanGate],
    plans: Sequence[AblationPlan],
    topic: TopicContext,
    chat: Chat,
    alpha: float = 0.05,
) -> tuple[Verdict, list[str]]:
    warnings: list[str] = []
    judge: bool | None = None
    discovery = ""
    if not gates:
        warnings.append(f"{candidate.id}: no ablation ran; verdict left inconclusive")
    else:
        key = f"falsification/{number}/0/verdict"
        user = chat.tpl.render("verdict", topic=topic.render(), candidate=_render_candidate(candidate),
                               trials=_render_trials(gates, plans))
        try:
            data = _load_json(chat.ask(key, user))
            if not isinstance(data.get("affirmed"), bool):
                raise TypeError("'affirmed' must be true or false")
            judge = data["affirmed"]
            discovery = str(data.get("discovery", "")).strip()
        except LLMError as exc:
            warnings.append(f"{candidate.id}: judge call failed ({exc}); verdict left inconclusive")
        except (ValueError, TypeError, AttributeError, KeyError) as exc:
            warnings.append(f"{candidate.id}: judge response unparseable ({exc}); verdict left inconclusive")
    status = decide(gates, judge, alpha)
    usable = [g for g in gates if g.usable]
    binding = max(usable, key=lambda g: (g.p, g.plan)) if usable else None
    v = Verdict(
        candidate.id,
        candidate.direction,
        tuple(gates),
        binding.t if binding else None,
        binding.df if binding else None,
        binding.p if binding else None,
        status,
        judge,
        discovery,
        alpha,
    )
    return v, warnings
