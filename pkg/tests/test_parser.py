import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from timeorient.parser import (
    EmptyInput,
    OutcomeKind,
    ParsePolicy,
    PatternSet,
    SwitchOutcome,
    parse_switch,
    refusal_rate,
)

CORPUS = json.loads((Path(__file__).parent / "fixtures" / "parser_corpus.json").read_text())


@pytest.mark.parametrize("case", CORPUS, ids=lambda c: f"{c['policy']}:{c['text'][:30]}")
def test_corpus(case):
    assert str(parse_switch(case["text"], 8, case["policy"])) == case["expect"]


def test_examples():
    assert parse_switch("4", 8, ParsePolicy.STRICT) == SwitchOutcome.switch_at(4, "4")
    assert parse_switch("I would first switch at Question 3.", 8, "lenient").index == 3
    out = parse_switch("As an AI, I'm unable to express preferences or engage in such decisions.", 8)
    assert out.kind is OutcomeKind.REFUSAL
    assert out.evidence == "unable to express preferences"
    assert parse_switch("9", 8).kind is OutcomeKind.UNPARSEABLE
    assert parse_switch("never", 8).kind is OutcomeKind.NEVER_SWITCH


def test_evidence_records_match():
    assert parse_switch("I would Never Switch.", 8).evidence == "Never Switch"
    assert parse_switch("Question 5 it is", 8).evidence == "5"
    assert parse_switch("Unclear", 8).evidence == ""


def test_range_tracks_instrument_length():
    assert parse_switch("6", 4).kind is OutcomeKind.UNPARSEABLE
    assert parse_switch("Question 6 or 3", 4).index == 3


def test_requires_two_questions():
    with pytest.raises(ValueError):
        parse_switch("1", 1)


def test_custom_patterns(tmp_path):
    path = tmp_path / "patterns.json"
    path.write_text(json.dumps({"never": ["stick with A"], "refusal": ["no comment"]}))
    patterns = PatternSet.from_file(path)
    assert parse_switch("I stick with A", 8, patterns=patterns).kind is OutcomeKind.NEVER_SWITCH
    assert parse_switch("No comment.", 8, patterns=patterns).kind is OutcomeKind.REFUSAL
    assert parse_switch("never", 8, patterns=patterns).kind is OutcomeKind.UNPARSEABLE


def test_outcome_round_trip():
    for o in (SwitchOutcome.switch_at(3), SwitchOutcome.never(), SwitchOutcome.refusal("I cannot"),
              SwitchOutcome.unparseable()):
        assert SwitchOutcome.from_dict(o.to_dict()) == o


def test_refusal_rate():
    s3, s5, r = SwitchOutcome.switch_at(3), SwitchOutcome.switch_at(5), SwitchOutcome.refusal()
    assert refusal_rate([s3, r, r, s5]) == 0.5
    assert refusal_rate([s3, s5]) == 0.0
    assert refusal_rate([r, r]) == 1.0
    with pytest.raises(EmptyInput):
        refusal_rate([])


@given(st.text(), st.integers(min_value=2, max_value=20))
def test_total_and_deterministic(text, n):
    for policy in ParsePolicy:
        first = parse_switch(text, n, policy)
        assert first == parse_switch(text, n, policy)
        if first.kind is OutcomeKind.SWITCH_AT:
            assert 1 <= first.index <= n


@given(st.text(), st.integers(min_value=2, max_value=20))
def test_strict_subset_of_lenient(text, n):
    strict = parse_switch(text, n, ParsePolicy.STRICT)
    if strict.kind is OutcomeKind.SWITCH_AT:
        assert parse_switch(text, n, ParsePolicy.LENIENT) == strict


@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from(["or", "and", "maybe", "then"]))
def test_two_distinct_candidates_are_unparseable(a, b, joiner):
    text = f"Question {a} {joiner} question {b}"
    out = parse_switch(text, 8)
    if a == b:
        assert out.index == a
    else:
        assert out.kind is OutcomeKind.UNPARSEABLE
