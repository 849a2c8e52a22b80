from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from timeorient.econometrics import (
    CellStats,
    Consistency,
    Flag,
    ImputationRule,
    ImputedPreference,
    InvalidOutcomeKind,
    NoValidTrials,
    OrientationClass,
    TooFewCells,
    TooFewTrials,
    aggregate_cell,
    consistency,
    context_sensitivity,
    implied_returns,
    impute_discount,
    manipulability,
    normalization_constant,
    paper_never_value,
)
from timeorient.instrument import build_price_list, default_price_list
from timeorient.parser import EmptyInput, SwitchOutcome

PL = default_price_list()
PAPER = ImputationRule.PAPER_ENDPOINT
MID = ImputationRule.BRACKET_MIDPOINT


def _rec(outcome, rule=PAPER):
    imp = impute_discount(outcome, PL, rule) if outcome.is_valid else None
    return outcome, imp


def _cell(answers, model="m", context="c"):
    outs = [SwitchOutcome.never() if a == "never" else SwitchOutcome.switch_at(a) for a in answers]
    return aggregate_cell([_rec(o) for o in outs], model, context)


def _means(model, value, context="c"):
    return CellStats(model, context, 1, 1, Fraction(value), 0.0, 2, 1.0, 1, 0.0)


@pytest.mark.parametrize("outcome, rule, expected", [
    (SwitchOutcome.switch_at(2), PAPER, Fraction("0.95")),
    (SwitchOutcome.never(), PAPER, Fraction("0.62")),
    (SwitchOutcome.switch_at(8), PAPER, Fraction("0.65")),
    (SwitchOutcome.switch_at(5), MID, Fraction("0.825")),
    (SwitchOutcome.switch_at(1), PAPER, Fraction(1)),
    (SwitchOutcome.never(), MID, Fraction("0.625")),
])
def test_impute_examples(outcome, rule, expected):
    assert impute_discount(outcome, PL, rule).delta == expected


def test_impute_flags():
    assert impute_discount(SwitchOutcome.switch_at(1), PL).flags == {Flag.WEAKLY_DOMINATED_ANSWER}
    assert impute_discount(SwitchOutcome.never(), PL).flags == {Flag.FROM_NEVER_SWITCH, Flag.EXTRAPOLATED_LOW}
    assert impute_discount(SwitchOutcome.switch_at(4), PL).flags == frozenset()


@pytest.mark.parametrize("outcome", [SwitchOutcome.refusal(), SwitchOutcome.unparseable()])
def test_impute_rejects_non_answers(outcome):
    with pytest.raises(InvalidOutcomeKind):
        impute_discount(outcome, PL)


def test_impute_rejects_out_of_range_index():
    with pytest.raises(InvalidOutcomeKind):
        impute_discount(SwitchOutcome.switch_at(9), PL)


def test_normalization_constant():
    assert normalization_constant() == Fraction(33, 100)
    assert paper_never_value(PL) == Fraction(62, 100)
    custom = build_price_list(40, 40, 2, 6, 1, 4)
    # last offer 30 of 40, half a step below is 29/40 = 0.725, rounded half-even
    assert paper_never_value(custom) == Fraction("0.72")
    assert normalization_constant(custom) == Fraction(38, 40) - Fraction("0.72")


def test_imputed_preference_round_trip():
    imp = impute_discount(SwitchOutcome.never(), PL)
    assert ImputedPreference.from_dict(imp.to_dict()) == imp
    assert imp.to_dict()["delta_exact"] == "31/50"


@pytest.mark.parametrize("index, simple, per_week", [(3, 11.1, 3.70), (6, 33.3, None), (1, 0.0, 0.0)])
def test_implied_returns(index, simple, per_week):
    r = implied_returns(PL[index])
    assert abs(r.simple_return * 100 - simple) <= 0.05
    if per_week is not None:
        assert abs(r.per_week_simple * 100 - per_week) <= 0.05


def test_implied_returns_compound():
    r = implied_returns(PL[3])
    assert r.per_week_compound == pytest.approx((20 / 18) ** (1 / 3) - 1)
    assert r.per_week_compound < r.per_week_simple


def test_aggregate_constant_cell():
    cell = _cell([4] * 10)
    assert cell.mean_delta == Fraction("0.85")
    assert cell.stdev_delta == 0.0
    assert (cell.mode_answer, cell.mode_share, cell.distinct_answers) == (4, 1.0, 1)


def test_aggregate_two_point_mean():
    assert _cell([2, "never"]).mean_delta == Fraction("0.785")


def test_aggregate_counts_refusals():
    cell = aggregate_cell([_rec(SwitchOutcome.switch_at(3)), _rec(SwitchOutcome.refusal()),
                           _rec(SwitchOutcome.switch_at(5))])
    assert cell.n_trials == 3 and cell.n_valid == 2
    assert cell.refusal_rate == pytest.approx(1 / 3)


def test_aggregate_all_refusals():
    cell = aggregate_cell([_rec(SwitchOutcome.refusal())] * 4)
    assert cell.n_valid == 0 and cell.mean_delta is None and cell.refusal_rate == 1.0


def test_aggregate_sample_stdev_and_tie_break():
    cell = _cell([2, 4])
    # 0.95 and 0.85: deviations of 0.05 each, n-1 = 1
    assert cell.stdev_delta == pytest.approx((2 * 0.05 ** 2) ** 0.5)
    assert cell.mode_answer == 2 and cell.mode_share == 0.5
    assert _cell(["never", 8]).mode_answer == 8
    assert _cell([3]).stdev_delta == 0.0


def test_aggregate_empty():
    with pytest.raises(EmptyInput):
        aggregate_cell([])


def test_manipulability_paper_benchmark():
    score = manipulability(_means("m", "0.95", "future"), _means("m", "0.62", "present"))
    assert score.exact_score == Fraction(33, 100)
    assert score.normalized == 1.0
    assert score.orientation_class is OrientationClass.MANIPULABLE


def test_manipulability_inert_and_inverted():
    assert manipulability(_means("m", "0.80"), _means("m", "0.80")).orientation_class is OrientationClass.INERT
    inv = manipulability(_means("m", "0.78"), _means("m", "0.83"), epsilon=0.02)
    assert inv.score == pytest.approx(-0.05)
    assert inv.orientation_class is OrientationClass.INVERTED


def test_manipulability_epsilon_boundary():
    s = manipulability(_means("m", "0.82"), _means("m", "0.80"), epsilon=0.02)
    assert s.orientation_class is OrientationClass.INERT


def test_manipulability_errors():
    empty = aggregate_cell([_rec(SwitchOutcome.refusal())], "m", "future")
    with pytest.raises(NoValidTrials):
        manipulability(empty, _means("m", "0.8"))
    with pytest.raises(ValueError):
        manipulability(_means("a", "0.8"), _means("b", "0.8"))


def test_context_sensitivity():
    geo = [_means("m", "0.85", c) for c in ("iran", "usa", "europe")]
    assert context_sensitivity(geo) == 0.0
    assert context_sensitivity([_means("m", "0.80"), _means("m", "0.90")]) == pytest.approx(0.10)
    with pytest.raises(TooFewCells):
        context_sensitivity([_means("m", "0.80")])


def test_consistency_classes():
    assert consistency(_cell([5] * 10)) is Consistency.IDENTICAL
    assert consistency(_cell([2, 3, 4, 5, 6, 7, 2, 5, 3, 8])) is Consistency.SCATTERED
    assert consistency(_cell([4] * 7 + [3, 3, 5])) is Consistency.STABLE
    assert consistency(_cell([4] * 5 + [3] * 5)) is Consistency.STABLE
    with pytest.raises(TooFewTrials):
        consistency(_cell([4]))


# --- properties ------------------------------------------------------------------------

@pytest.mark.parametrize("rule", list(ImputationRule))
def test_monotone_in_switch_index(rule):
    deltas = [impute_discount(SwitchOutcome.switch_at(s), PL, rule).delta for s in range(2, 9)]
    assert all(a > b for a, b in zip(deltas, deltas[1:]))
    assert impute_discount(SwitchOutcome.never(), PL, rule).delta < deltas[-1]


outcomes = st.one_of(st.integers(1, 8).map(SwitchOutcome.switch_at), st.just(SwitchOutcome.never()))


@given(outcomes)
def test_range_and_weekly_factor(outcome):
    imp = impute_discount(outcome, PL)
    assert Fraction("0.62") <= imp.delta <= 1
    assert abs(imp.weekly_factor ** 3 - imp.delta_3w) <= 1e-12


undominated = st.one_of(st.integers(2, 8).map(SwitchOutcome.switch_at), st.just(SwitchOutcome.never()))


@given(st.lists(undominated, min_size=1, max_size=10), st.lists(undominated, min_size=1, max_size=10))
def test_manipulability_bound(future, present):
    f = aggregate_cell([_rec(o) for o in future], "m", "future")
    p = aggregate_cell([_rec(o) for o in present], "m", "present")
    s = manipulability(f, p)
    assert abs(s.exact_score) <= Fraction(33, 100)
    assert abs(s.normalized * 0.33 - s.score) <= 1e-12
