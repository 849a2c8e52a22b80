"""Discount-factor imputation and the campaign-level statistics.

Imputed factors are kept as exact ``Fraction`` values (amounts are integer
cents), so means and differences reproduce two-decimal endpoints exactly.
Float views are exposed for reporting.
"""
from __future__ import annotations

import enum
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Iterable, NamedTuple, Sequence

from .instrument import PriceList, PriceListQuestion, default_price_list
from .parser import EmptyInput, OutcomeKind, SwitchOutcome

DEFAULT_EPSILON = 0.02


class ImputationRule(str, enum.Enum):
    PAPER_ENDPOINT = "paper"
    BRACKET_MIDPOINT = "midpoint"


class Flag(str, enum.Enum):
    WEAKLY_DOMINATED_ANSWER = "WeaklyDominatedAnswer"
    EXTRAPOLATED_LOW = "ExtrapolatedLow"
    FROM_NEVER_SWITCH = "FromNeverSwitch"


class InvalidOutcomeKind(ValueError):
    pass


class NoValidTrials(ValueError):
    pass


class TooFewCells(ValueError):
    pass


class TooFewTrials(ValueError):
    pass


@dataclass(frozen=True)
class ImputedPreference:
    delta: Fraction
    flags: frozenset[Flag] = frozenset()
    gap_weeks: int = 3

    @property
    def delta_3w(self) -> float:
        return float(self.delta)

    @property
    def weekly_factor(self) -> float:
        return float(self.delta) ** (1.0 / self.gap_weeks)

    def to_dict(self) -> dict:
        return {
            "delta_3w": self.delta_3w,
            "delta_exact": f"{self.delta.numerator}/{self.delta.denominator}",
            "weekly_factor": self.weekly_factor,
            "gap_weeks": self.gap_weeks,
            "flags": sorted(f.value for f in self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ImputedPreference:
        return cls(
            delta=Fraction(data["delta_exact"]),
            flags=frozenset(Flag(f) for f in data.get("flags", ())),
            gap_weeks=int(data.get("gap_weeks", 3)),
        )


def paper_never_value(pl: PriceList) -> Fraction:
    """Never-switch imputation under the paper-endpoint rule.

    Half a step below the last smaller-sooner offer, rounded half-even to two
    decimals: 12.5/20 = 0.625 -> 0.62 on the default list.
    """
    last = pl.questions[-1].ss_amount
    return round(Fraction(2 * last - pl.step, 2 * pl.ll_amount), 2)


def normalization_constant(pl: PriceList | None = None) -> Fraction:
    """Largest attainable manipulability score: first undominated switch minus never."""
    pl = pl or default_price_list()
    return Fraction(pl[2].ss_amount, pl.ll_amount) - paper_never_value(pl)


def impute_discount(
    outcome: SwitchOutcome,
    pl: PriceList,
    rule: ImputationRule | str = ImputationRule.PAPER_ENDPOINT,
) -> ImputedPreference:
    rule = ImputationRule(rule)
    ll = pl.ll_amount
    gap = pl.gap_weeks
    if outcome.kind is OutcomeKind.NEVER_SWITCH:
        flags = frozenset({Flag.FROM_NEVER_SWITCH, Flag.EXTRAPOLATED_LOW})
        if rule is ImputationRule.PAPER_ENDPOINT:
            return ImputedPreference(paper_never_value(pl), flags, gap)
        last = pl.questions[-1].ss_amount
        return ImputedPreference(Fraction(2 * last - pl.step, 2 * ll), flags, gap)
    if outcome.kind is not OutcomeKind.SWITCH_AT:
        raise InvalidOutcomeKind(f"cannot impute a discount factor from {outcome}")
    s = outcome.index
    if not 1 <= s <= len(pl):
        raise InvalidOutcomeKind(f"switch index {s} outside 1..{len(pl)}")
    if s == 1:
        return ImputedPreference(Fraction(1), frozenset({Flag.WEAKLY_DOMINATED_ANSWER}), gap)
    if rule is ImputationRule.PAPER_ENDPOINT:
        return ImputedPreference(Fraction(pl[s].ss_amount, ll), frozenset(), gap)
    return ImputedPreference(Fraction(pl[s].ss_amount + pl[s - 1].ss_amount, 2 * ll), frozenset(), gap)


class ImpliedReturns(NamedTuple):
    simple_return: float
    per_week_simple: float
    per_week_compound: float


def implied_returns(q: PriceListQuestion) -> ImpliedReturns:
    """Return earned by waiting for the larger-later amount at this question."""
    if q.ss_amount <= 0:
        raise ValueError("smaller-sooner amount must be positive")
    weeks = q.ll_delay - q.ss_delay
    simple = (q.ll_amount - q.ss_amount) / q.ss_amount
    compound = (q.ll_amount / q.ss_amount) ** (1.0 / weeks) - 1.0
    return ImpliedReturns(simple, simple / weeks, compound)


def _answer_sort_key(answer: int | str) -> tuple[int, int]:
    # integers ascending, "never" after every integer
    return (1, 0) if answer == "never" else (0, int(answer))


@dataclass(frozen=True)
class CellStats:
    model_id: str
    context_id: str
    n_trials: int
    n_valid: int
    mean_delta: Fraction | None
    stdev_delta: float | None
    mode_answer: int | str | None
    mode_share: float
    distinct_answers: int
    refusal_rate: float
    answers: tuple = field(default=(), compare=False)


def aggregate_cell(
    records: Sequence[tuple[SwitchOutcome, ImputedPreference | None]],
    model_id: str = "",
    context_id: str = "",
) -> CellStats:
    if not records:
        raise EmptyInput("aggregate_cell needs at least one record")
    deltas = [imp.delta for outcome, imp in records if imp is not None and outcome.is_valid]
    answers = [outcome.answer for outcome, imp in records if imp is not None and outcome.is_valid]
    refusals = sum(1 for outcome, _ in records if outcome.kind is OutcomeKind.REFUSAL)

    mean = stdev = None
    if deltas:
        mean = sum(deltas, Fraction(0)) / len(deltas)
        stdev = math.sqrt(statistics.variance(deltas)) if len(deltas) > 1 else 0.0

    mode_answer, mode_share = None, 0.0
    if answers:
        counts = Counter(answers)
        top = max(counts.values())
        mode_answer = min((a for a, c in counts.items() if c == top), key=_answer_sort_key)
        mode_share = top / len(answers)

    return CellStats(
        model_id=model_id,
        context_id=context_id,
        n_trials=len(records),
        n_valid=len(deltas),
        mean_delta=mean,
        stdev_delta=stdev,
        mode_answer=mode_answer,
        mode_share=mode_share,
        distinct_answers=len(set(answers)),
        refusal_rate=refusals / len(records),
        answers=tuple(answers),
    )


class OrientationClass(str, enum.Enum):
    MANIPULABLE = "Manipulable"
    INERT = "Inert"
    INVERTED = "Inverted"


@dataclass(frozen=True)
class ManipulabilityScore:
    model_id: str
    delta_future: float
    delta_present: float
    score: float
    normalized: float
    orientation_class: OrientationClass
    exact_score: Fraction = field(repr=False, default=Fraction(0))


def _exact(value: Real) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


def manipulability(
    future: CellStats,
    present: CellStats,
    epsilon: float = DEFAULT_EPSILON,
    pl: PriceList | None = None,
) -> ManipulabilityScore:
    if future.model_id != present.model_id:
        raise ValueError(f"cells belong to different models: {future.model_id!r} vs {present.model_id!r}")
    for cell in (future, present):
        if cell.n_valid < 1 or cell.mean_delta is None:
            raise NoValidTrials(f"no valid trials for {cell.model_id!r} in context {cell.context_id!r}")
    f, p = _exact(future.mean_delta), _exact(present.mean_delta)
    score = f - p
    normalized = score / normalization_constant(pl)
    if score > epsilon:
        cls = OrientationClass.MANIPULABLE
    elif score < -epsilon:
        cls = OrientationClass.INVERTED
    else:
        cls = OrientationClass.INERT
    return ManipulabilityScore(
        model_id=future.model_id,
        delta_future=float(f),
        delta_present=float(p),
        score=float(score),
        normalized=float(normalized),
        orientation_class=cls,
        exact_score=score,
    )


def context_sensitivity(cells: Iterable[CellStats]) -> float:
    """Largest gap between mean imputed factors across cells of one group."""
    cells = list(cells)
    if len({c.model_id for c in cells}) > 1:
        raise ValueError("context_sensitivity compares cells of a single model")
    means = [_exact(c.mean_delta) for c in cells if c.mean_delta is not None]
    if len(means) < 2:
        raise TooFewCells(f"need at least two cells with valid trials, got {len(means)}")
    return float(max(means) - min(means))


class Consistency(str, enum.Enum):
    IDENTICAL = "Identical"
    STABLE = "Stable"
    SCATTERED = "Scattered"


def consistency(cell: CellStats) -> Consistency:
    if cell.n_valid < 2:
        raise TooFewTrials(f"consistency needs >= 2 valid trials, got {cell.n_valid}")
    if cell.distinct_answers == 1:
        return Consistency.IDENTICAL
    if cell.mode_share < 0.5:
        return Consistency.SCATTERED
    return Consistency.STABLE
