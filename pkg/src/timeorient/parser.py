"""Reply classification: switch index, never-switch, refusal or unparseable."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence


class EmptyInput(ValueError):
    """Raised when a statistic is requested over no observations."""


class OutcomeKind(str, enum.Enum):
    SWITCH_AT = "SwitchAt"
    NEVER_SWITCH = "NeverSwitch"
    REFUSAL = "Refusal"
    UNPARSEABLE = "Unparseable"


class ParsePolicy(str, enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class SwitchOutcome:
    kind: OutcomeKind
    index: int | None = None
    evidence: str = ""

    def __post_init__(self) -> None:
        if (self.kind is OutcomeKind.SWITCH_AT) != (self.index is not None):
            raise ValueError("index is required for SwitchAt and forbidden otherwise")
        if self.index is not None and self.index < 1:
            raise ValueError(f"switch index must be >= 1, got {self.index}")

    @classmethod
    def switch_at(cls, index: int, evidence: str = "") -> SwitchOutcome:
        return cls(OutcomeKind.SWITCH_AT, index, evidence or str(index))

    @classmethod
    def never(cls, evidence: str = "never") -> SwitchOutcome:
        return cls(OutcomeKind.NEVER_SWITCH, None, evidence)

    @classmethod
    def refusal(cls, evidence: str = "") -> SwitchOutcome:
        return cls(OutcomeKind.REFUSAL, None, evidence)

    @classmethod
    def unparseable(cls) -> SwitchOutcome:
        return cls(OutcomeKind.UNPARSEABLE)

    @property
    def is_valid(self) -> bool:
        """True when the outcome carries a usable preference."""
        return self.kind in (OutcomeKind.SWITCH_AT, OutcomeKind.NEVER_SWITCH)

    @property
    def answer(self) -> int | str | None:
        if self.kind is OutcomeKind.SWITCH_AT:
            return self.index
        if self.kind is OutcomeKind.NEVER_SWITCH:
            return "never"
        return None

    def __str__(self) -> str:
        if self.kind is OutcomeKind.SWITCH_AT:
            return f"SwitchAt({self.index})"
        return self.kind.value

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "index": self.index, "evidence": self.evidence}

    @classmethod
    def from_dict(cls, data: dict) -> SwitchOutcome:
        return cls(OutcomeKind(data["kind"]), data.get("index"), data.get("evidence", ""))


@dataclass(frozen=True)
class PatternSet:
    never: tuple[str, ...] = field(default_factory=tuple)
    refusal: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_file(cls, path: str | Path) -> PatternSet:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(data.get("never", ())), tuple(data.get("refusal", ())))


@lru_cache(maxsize=None)
def default_patterns() -> PatternSet:
    text = resources.files("timeorient.data").joinpath("patterns.json").read_text(encoding="utf-8")
    data = json.loads(text)
    return PatternSet(tuple(data["never"]), tuple(data["refusal"]))


@lru_cache(maxsize=256)
def _phrase_regex(phrase: str) -> re.Pattern[str]:
    # word-bounded so that "never" does not fire inside "nevertheless"
    return re.compile(rf"(?<!\w){re.escape(phrase)}(?!\w)", re.IGNORECASE)


def _first_match(text: str, phrases: Iterable[str]) -> str | None:
    for phrase in phrases:
        m = _phrase_regex(phrase).search(text)
        if m:
            return m.group(0)
    return None


_WHOLE_INT = re.compile(r"[+-]?\d+")
# maximal digit runs, allowing decimal/thousands separators so "11.1" is one token
_NUMBER = re.compile(r"(?<![\w.,])\d+(?:[.,]\d+)*(?!\d|[.,]\d)")


def _integer_mentions(text: str) -> list[int]:
    found = []
    for m in _NUMBER.finditer(text):
        token = m.group(0)
        following = text[m.end():m.end() + 1]
        if not token.isdigit() or following == "%" or (following and following.isalpha()):
            continue
        found.append(int(token))
    return found


def parse_switch(
    text: str,
    n: int,
    policy: ParsePolicy | str = ParsePolicy.LENIENT,
    patterns: PatternSet | None = None,
) -> SwitchOutcome:
    if n < 2:
        raise ValueError(f"instrument length must be >= 2, got {n}")
    policy = ParsePolicy(policy)
    trimmed = text.strip()

    if _WHOLE_INT.fullmatch(trimmed):
        value = int(trimmed)
        if 1 <= value <= n:
            return SwitchOutcome.switch_at(value, trimmed)
        return SwitchOutcome.unparseable()
    if policy is ParsePolicy.STRICT:
        return SwitchOutcome.unparseable()

    patterns = patterns or default_patterns()
    in_range = {v for v in _integer_mentions(trimmed) if 1 <= v <= n}
    if len(in_range) == 1:
        value = in_range.pop()
        return SwitchOutcome.switch_at(value, str(value))

    hit = _first_match(trimmed, patterns.never)
    if hit is not None:
        return SwitchOutcome.never(hit)
    hit = _first_match(trimmed, patterns.refusal)
    if hit is not None:
        return SwitchOutcome.refusal(hit)
    return SwitchOutcome.unparseable()


def refusal_rate(outcomes: Sequence[SwitchOutcome]) -> float:
    if not outcomes:
        raise EmptyInput("refusal_rate needs at least one outcome")
    refused = sum(1 for o in outcomes if o.kind is OutcomeKind.REFUSAL)
    return refused / len(outcomes)

