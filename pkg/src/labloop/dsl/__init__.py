"""Grammar-constrained methodology documents and their interpreter."""

from .engine import interpret, validate, validate_in
from .model import (
    CrossRule,
    Diagnostic,
    DslDocument,
    DslParseError,
    DslValidationError,
    ExperimentPlan,
    Grammar,
    GrammarError,
    InterpretationError,
    Paradigm,
    ParamSchema,
    PlanAction,
    canonical_dumps,
)
from .registry import GrammarHandle, GrammarRegistry, builtin_grammars, default_registry, load_grammar
from .text import parse, serialize

__all__ = [
    "CrossRule",
    "Diagnostic",
    "DslDocument",
    "DslParseError",
    "DslValidationError",
    "ExperimentPlan",
    "Grammar",
    "GrammarError",
    "GrammarHandle",
    "GrammarRegistry",
    "InterpretationError",
    "Paradigm",
    "ParamSchema",
    "PlanAction",
    "builtin_grammars",
    "canonical_dumps",
    "default_registry",
    "interpret",
    "load_grammar",
    "parse",
    "serialize",
    "validate",
    "validate_in",
]
