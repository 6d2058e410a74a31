"""Falsification phase runner: screen the best lineage, then test each candidate factor."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

from ..orchestrator import RunAborted, Services
from .agent import (
    AblationPlan,
    Chat,
    DiscoveryCandidate,
    Verdict,
    gate,
    generate_candidates,
    plan_ablations,
    run_trials,
    verdict,
)
from .screening import ScreeningError, screen

log = logging.getLogger(__name__)


@dataclass
class CandidateOutcome:
    candidate: DiscoveryCandidate
    plans: list[AblationPlan]
    plan_warnings: list[str]
    trials: list[dict]
    verdict: Verdict
    verdict_warnings: list[str]


def _lineage(svc: Services, lineage_event: Mapping) -> list:
    return [svc.store.turn(i, j) for i, j in lineage_event["turns"]]


def _test_candidate(svc: Services, chat: Chat, candidate: DiscoveryCandidate, number: int, lineage: list) -> CandidateOutcome:
    fc = svc.config.falsification
    plans, plan_warnings = plan_ablations(candidate, number, lineage, svc.trivial_document(), svc.topic, chat,
                                          svc.registry, fc.max_plans, fc.trials_per_arm)
    gates, trials = [], []
    for plan in plans:
        outcome = run_trials(plan, svc.env, svc.registry, svc.config.seed, svc.config.parallelism)
        trials.extend(outcome.records)
        gates.append(gate(plan.index, outcome.ablation, outcome.baseline, candidate.direction))
    v, verdict_warnings = verdict(candidate, number, gates, plans, svc.topic, chat, fc.alpha)
    return CandidateOutcome(candidate, plans, plan_warnings, trials, v, verdict_warnings)


def run_falsification(svc: Services, lineage_event: Mapping) -> str:
    """Write screening, candidate, plan, trial and verdict events; returns the phase status."""
    store = svc.store
    fc = svc.config.falsification
    if store.events_of("falsification_end"):
        return store.events_of("falsification_end")[-1].data["status"]
    if store.events_of("screening"):
        raise RunAborted("falsification phase was interrupted part-way and cannot be resumed")
    if not fc.enabled:
        store.append_event("falsification_end", {"status": "disabled"})
        return "disabled"
    unknown = sorted(set(fc.thresholds) - set(svc.env.validation_names))
    if unknown:
        raise RunAborted(f"screening thresholds name non-validation benchmarks: {unknown}")
    lineage = _lineage(svc, lineage_event)
    try:
        pairs = screen(lineage, fc.thresholds)
        error = None
    except ScreeningError as exc:
        pairs, error = [], str(exc)
    store.append_event("screening", {
        "lineage": [list(t.key) for t in lineage],
        "thresholds": dict(fc.thresholds),
        "pairs": [p.to_dict() for p in pairs],
        "error": error,
    })
    if not pairs:
        status = "no_flags"
        store.append_event("falsification_end", {"status": status})
        return status

    chat = Chat(svc.gateway, fc.temperature, svc.config.agents.model, svc.templates, svc.on_prompt)
    candidates, warnings = generate_candidates(pairs, lineage, svc.topic, chat, fc.max_candidates)
    store.append_event("candidates", {"candidates": [c.to_dict() for c in candidates], "warnings": warnings})

    def work(item: tuple[int, DiscoveryCandidate]) -> CandidateOutcome:
        number, cand = item
        return _test_candidate(svc, chat, cand, number, lineage)

    with ThreadPoolExecutor(max_workers=max(1, min(fc.max_candidates, len(candidates)))) as pool:
        outcomes = list(pool.map(work, enumerate(candidates, start=1)))
    # appended in candidate order so the log does not depend on scheduling
    for out in outcomes:
        store.append_event("plans", {"candidate_id": out.candidate.id, "plans": [p.to_dict() for p in out.plans],
                                     "warnings": out.plan_warnings})
        for record in out.trials:
            store.append_event("trial", record)
        store.append_event("verdict", {**out.verdict.to_dict(), "warnings": out.verdict_warnings})
    status = "completed"
    store.append_event("falsification_end", {"status": status})
    return status
