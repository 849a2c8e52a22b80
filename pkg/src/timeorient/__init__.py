"""Measure the time orientation of language models with a multiple price list."""
from .instrument import (
    ContextProfile,
    PriceList,
    build_price_list,
    compose_trial_prompt,
    context_catalog,
    default_price_list,
    render_choice_prompt,
    render_rationale_prompt,
)
from .parser import OutcomeKind, ParsePolicy, SwitchOutcome, parse_switch, refusal_rate
from .econometrics import (
    ImputationRule,
    aggregate_cell,
    consistency,
    context_sensitivity,
    impute_discount,
    implied_returns,
    manipulability,
)

__version__ = "0.1.0"

__all__ = [
    "ContextProfile", "PriceList", "build_price_list", "compose_trial_prompt",
    "context_catalog", "default_price_list", "render_choice_prompt", "render_rationale_prompt",
    "OutcomeKind", "ParsePolicy", "SwitchOutcome", "parse_switch", "refusal_rate",
    "ImputationRule", "aggregate_cell", "consistency", "context_sensitivity",
    "impute_discount", "implied_returns", "manipulability",
]
