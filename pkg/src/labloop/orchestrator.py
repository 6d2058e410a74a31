"""Pre-falsification loop: turn 0, then M iterations of N parallel threads with reranking."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .agents import AgentError, Templates, TopicContext, propose, review, topic_context
from .config import RunConfig
from .dsl import DslDocument, DslValidationError, GrammarRegistry, interpret, validate_in
from .envs import EnvError, Environment
from .llm import Gateway
from .metrics import rerank_score
from .record import ExperimentResult, ExpSettings, Proposal, RunStore, TurnRecord
from .seeds import derive_seed

log = logging.getLogger(__name__)

PromptHook = Callable[[str, str], None]


class RunAborted(RuntimeError):
    pass


def assign_parents(iteration: int, n: int, n_s: int, retained: Sequence[int]) -> dict[int, int]:
    """Child thread j of ``iteration`` descends from retained[ceil(j * n_s / n) - 1].

    Each retained thread receives exactly n / n_s children.
    """
    if iteration < 2:
        raise ValueError("parents exist from the second iteration on")
    if n_s < 1 or n % n_s:
        raise ValueError(f"N={n} must be a positive multiple of N_s={n_s}")
    if len(retained) != n_s:
        raise ValueError(f"expected {n_s} retained threads, got {len(retained)}")
    return {j: retained[-(-j * n_s // n) - 1] for j in range(1, n + 1)}


def literal_parent_index(j: int, n: int, n_s: int) -> int:
    """The index expression as literally written, kept for the audit trail (0-based child j)."""
    return j * (n // n_s) + 1


def select_retained(scores: Mapping[int, float | None], n_s: int) -> list[int]:
    """Top ``n_s`` threads by score, ties to the lower thread index; failed threads rank last."""
    order = sorted(scores, key=lambda j: (-(scores[j] if scores[j] is not None else -math.inf), j))
    return order[:n_s]


@dataclass
class SamplingState:
    iteration: int
    scores: dict[int, float | None]
    retained: list[int]


@dataclass
class ThreadOutcome:
    record: TurnRecord
    score: float | None


@dataclass
class Services:
    config: RunConfig
    env: Environment
    gateway: Gateway
    store: RunStore
    registry: GrammarRegistry
    templates: Templates | None = None
    on_prompt: PromptHook | None = None
    topic: TopicContext = field(init=False)

    def __post_init__(self) -> None:
        self.topic = topic_context(self.registry.get(self.config.topic), self.env.benchmarks)

    def trivial_document(self) -> DslDocument:
        raw = self.config.trivial_method or self.env.trivial_method()
        return validate_in(raw, self.registry)


def _score(result: ExperimentResult) -> float | None:
    return rerank_score(result) if result.ok else None


def _execute(svc: Services, doc: DslDocument, seed: int) -> ExperimentResult:
    plan = interpret(doc, svc.registry)
    try:
        result = svc.env.execute(plan, seed)
    except EnvError as exc:
        return ExperimentResult.failure(f"environment error: {exc}")
    result.check_complete(svc.env.validation_names)
    return result


def run_turn_zero(svc: Services) -> TurnRecord:
    """Record the trivial method's result as turn 0; abort the run if it fails."""
    if svc.store.has_turn(0, 1):
        return svc.store.turn(0, 1)
    try:
        doc = svc.trivial_document()
        result = _execute(svc, doc, derive_seed(svc.config.seed, "execute", 0, 1))
    except (DslValidationError, EnvError) as exc:
        result = ExperimentResult.failure(f"trivial method failed: {exc}")
    record = TurnRecord(0, 1, result)
    svc.store.append_turn(record)
    if not result.ok:
        raise RunAborted(f"turn 0 failed: {result.failure_reason}")
    return record


def _stub_proposal(iteration: int) -> Proposal:
    return Proposal("", "", {}, ExpSettings(iteration - 1), "", "", None if iteration == 1 else "")


def run_thread(svc: Services, iteration: int, thread: int, parent: int | None) -> ThreadOutcome:
    parent_key = (iteration - 1, parent) if parent is not None else None
    view = svc.store.view_for(iteration, parent_key)
    cfg = svc.config.agents
    warnings: list[str] = []
    doc = None
    proposal = None
    for attempt in ("", "@retry"):
        try:
            outcome = propose(svc.topic, view, cfg, svc.gateway, iteration, thread,
                              attempt=attempt, templates=svc.templates, on_prompt=svc.on_prompt)
        except AgentError as exc:
            warnings.append(str(exc))
            continue
        warnings.extend(outcome.warnings)
        proposal = outcome.proposal
        try:
            doc = validate_in(proposal.methodology_dsl, svc.registry)
            break
        except DslValidationError as exc:
            warnings.append(f"DSL rejected{' on retry' if attempt else ''}: {exc}")
    if proposal is None:
        result = ExperimentResult.failure("no parseable proposal")
        return ThreadOutcome(TurnRecord(iteration, thread, result, parent_key, _stub_proposal(iteration),
                                        warnings=tuple(warnings)), None)
    if doc is None:
        result = ExperimentResult.failure("methodology failed DSL validation twice")
        return ThreadOutcome(TurnRecord(iteration, thread, result, parent_key, proposal, warnings=tuple(warnings)), None)
    proposal = Proposal(proposal.idea, proposal.methodology_text, doc, proposal.exp_settings,
                        proposal.hypothesis, proposal.related_feature, proposal.rebuttal)
    result = _execute(svc, doc, derive_seed(svc.config.seed, "execute", iteration, thread))
    rev = None
    specs: tuple = ()
    if result.ok:
        outcome = review(svc.topic, proposal, result, view, cfg, svc.gateway, iteration, thread,
                         templates=svc.templates, on_prompt=svc.on_prompt)
        rev = outcome.review
        warnings.extend(outcome.warnings)
        specs = tuple(s.to_dict() for s in outcome.metric_specs)
    record = TurnRecord(iteration, thread, result, parent_key, proposal, rev, tuple(warnings), specs)
    return ThreadOutcome(record, _score(result))


def selection_event(iteration: int, n: int, n_s: int, records: Mapping[int, TurnRecord]) -> dict:
    """Everything reranking decided at one iteration, in a replayable form."""
    scores = {j: _score(records[j].result) for j in sorted(records)}
    retained = select_retained(scores, n_s)
    inputs = {
        str(j): {name: s.value for name, s in sorted(records[j].result.scores("validation").items())}
        for j in sorted(records)
    }
    return {
        "iteration": iteration,
        "rerank_inputs": inputs,
        "scores": {str(j): scores[j] for j in sorted(scores)},
        "retained": retained,
        "next_parents": {str(j): p for j, p in assign_parents(2, n, n_s, retained).items()},
        "literal_parent_indices": {str(j): literal_parent_index(j, n, n_s) for j in range(n)},
    }


def run_iteration(svc: Services, iteration: int, parents: Mapping[int, int] | None) -> SamplingState:
    cfg = svc.config
    todo = [j for j in range(1, cfg.N + 1) if not svc.store.has_turn(iteration, j)]

    def work(j: int) -> ThreadOutcome:
        return run_thread(svc, iteration, j, parents[j] if parents else None)

    with ThreadPoolExecutor(max_workers=min(cfg.parallelism, max(1, len(todo)))) as pool:
        outcomes = list(pool.map(work, todo))
    # barrier passed: append in thread order so the log does not depend on scheduling
    for out in outcomes:
        svc.store.append_turn(out.record)
    records = {j: svc.store.turn(iteration, j) for j in range(1, cfg.N + 1)}
    event = selection_event(iteration, cfg.N, cfg.N_s, records)
    svc.store.append_event("selection", event)
    scores = {j: _score(r.result) for j, r in records.items()}
    return SamplingState(iteration, scores, event["retained"])


def _recorded_selections(store: RunStore) -> dict[int, dict]:
    return {e.data["iteration"]: e.data for e in store.events_of("selection")}


def best_lineage_event(svc: Services) -> dict:
    final = _recorded_selections(svc.store)[svc.config.M]
    best = final["retained"][0]
    chain = svc.store.lineage(svc.config.M, best)
    return {"best": [svc.config.M, best], "turns": [[t.iteration, t.thread] for t in chain]}


def run_pre_falsification(svc: Services) -> dict:
    """Run (or resume) the refinement loop; returns the best-lineage event."""
    run_turn_zero(svc)
    done = _recorded_selections(svc.store)
    parents = None
    for i in range(1, svc.config.M + 1):
        if i in done:
            state_retained = done[i]["retained"]
        else:
            state_retained = run_iteration(svc, i, parents).retained
        if i < svc.config.M:
            parents = assign_parents(i + 1, svc.config.N, svc.config.N_s, state_retained)
    existing = svc.store.events_of("lineage")
    if existing:
        return existing[-1].data
    event = best_lineage_event(svc)
    svc.store.append_event("lineage", event)
    return event
