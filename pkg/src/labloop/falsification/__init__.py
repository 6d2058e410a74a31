"""Screening, candidate factors, single-factor ablations, verdicts and evaluation statistics."""

from .agent import (
    AblationPlan,
    Chat,
    DiscoveryCandidate,
    PlanGate,
    TrialOutcome,
    Verdict,
    ablate_params,
    decide,
    gate,
    generate_candidates,
    outcome_from_records,
    parse_candidates,
    plan_ablations,
    run_trials,
    touches,
    verdict,
)
from .evaluation import DIMENSIONS, DimensionStats, FalsificationEvalRecord, aggregate_eval
from .phase import run_falsification
from .screening import FlaggedPair, ScreeningError, scan, screen
from .stats import WelchResult, betainc, t_cdf, welch_t_test

__all__ = [
    "AblationPlan",
    "Chat",
    "DIMENSIONS",
    "DimensionStats",
    "DiscoveryCandidate",
    "FalsificationEvalRecord",
    "FlaggedPair",
    "PlanGate",
    "ScreeningError",
    "TrialOutcome",
    "Verdict",
    "WelchResult",
    "ablate_params",
    "aggregate_eval",
    "betainc",
    "decide",
    "gate",
    "generate_candidates",
    "outcome_from_records",
    "parse_candidates",
    "plan_ablations",
    "run_falsification",
    "run_trials",
    "scan",
    "screen",
    "t_cdf",
    "touches",
    "verdict",
    "welch_t_test",
]
