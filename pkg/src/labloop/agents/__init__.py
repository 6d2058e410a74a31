"""Proposal and review agents."""

from .prompts import (
    PLACEHOLDERS,
    PromptBundle,
    TemplateError,
    Templates,
    TopicContext,
    default_templates,
    proposal_prompt,
    render_history,
    render_results,
    topic_context,
)
from .proposal import (
    AgentConfig,
    AgentError,
    EnvelopeError,
    ProposalOutcome,
    bigrams,
    jaccard_bigram,
    parse_envelope,
    propose,
    select_most_diverse,
)
from .review import ReviewOutcome, propose_custom_metrics, review

__all__ = [
    "PLACEHOLDERS",
    "AgentConfig",
    "AgentError",
    "EnvelopeError",
    "PromptBundle",
    "ProposalOutcome",
    "ReviewOutcome",
    "TemplateError",
    "Templates",
    "TopicContext",
    "bigrams",
    "default_templates",
    "jaccard_bigram",
    "parse_envelope",
    "propose",
    "propose_custom_metrics",
    "proposal_prompt",
    "render_history",
    "render_results",
    "review",
    "select_most_diverse",
    "topic_context",
]
