"""Multiple-price-list instrument, prompt rendering and the persona catalog.

Amounts are integer cents throughout. The default list offers 20..13 cents
in one week against 20 cents in four weeks.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

RESPONSE_DIRECTIVE = (
    "Indicate the number of the question (between 1 and {n}) where you first "
    "switch to choosing Option B. Please only return the number, NOTHING ELSE!"
)


class InstrumentError(ValueError):
    """Raised for price-list parameters that cannot form a valid instrument."""


@dataclass(frozen=True)
class PriceListQuestion:
    index: int
    ss_amount: int
    ss_delay: int
    ll_amount: int
    ll_delay: int


@dataclass(frozen=True)
class PriceList:
    questions: tuple[PriceListQuestion, ...]
    step: int

    def __len__(self) -> int:
        return len(self.questions)

    def __getitem__(self, index: int) -> PriceListQuestion:
        """1-based access, matching question numbers."""
        if not 1 <= index <= len(self.questions):
            raise IndexError(f"question {index} outside 1..{len(self.questions)}")
        return self.questions[index - 1]

    @property
    def ll_amount(self) -> int:
        return self.questions[0].ll_amount

    @property
    def ss_delay(self) -> int:
        return self.questions[0].ss_delay

    @property
    def ll_delay(self) -> int:
        return self.questions[0].ll_delay

    @property
    def gap_weeks(self) -> int:
        return self.ll_delay - self.ss_delay

    def params(self) -> dict[str, int]:
        first = self.questions[0]
        return {
            "ll_amount": first.ll_amount,
            "ss_start": first.ss_amount,
            "step": self.step,
            "n": len(self.questions),
            "ss_delay": first.ss_delay,
            "ll_delay": first.ll_delay,
        }


def build_price_list(
    ll_amount: int,
    ss_start: int,
    step: int,
    n: int,
    ss_delay: int,
    ll_delay: int,
) -> PriceList:
    """Build an SS-descending price list.

    The first question always offers equal amounts, so ``ss_start`` must equal
    ``ll_amount`` for the list to satisfy the instrument invariants.
    """
    for name, value in (("ll_amount", ll_amount), ("ss_start", ss_start), ("step", step),
                        ("n", n), ("ss_delay", ss_delay), ("ll_delay", ll_delay)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InstrumentError(f"{name} must be an integer, got {value!r}")
    if ll_amount < 1:
        raise InstrumentError(f"ll_amount must be positive, got {ll_amount}")
    if ss_start > ll_amount:
        raise InstrumentError(f"ss_start ({ss_start}) exceeds ll_amount ({ll_amount})")
    if ss_start != ll_amount:
        raise InstrumentError(
            f"question 1 must offer equal amounts: ss_start={ss_start}, ll_amount={ll_amount}"
        )
    if n < 2:
        raise InstrumentError(f"n must be at least 2, got {n}")
    if step < 1:
        raise InstrumentError(f"step must be at least 1 cent, got {step}")
    if ss_delay < 0:
        raise InstrumentError(f"ss_delay must be non-negative, got {ss_delay}")
    if ll_delay <= ss_delay:
        raise InstrumentError(f"ll_delay ({ll_delay}) must exceed ss_delay ({ss_delay})")
    last = ss_start - (n - 1) * step
    if last < 1:
        raise InstrumentError(
            f"last smaller-sooner amount would be {last} cents; it must stay >= 1"
        )
    questions = tuple(
        PriceListQuestion(
            index=i + 1,
            ss_amount=ss_start - i * step,
            ss_delay=ss_delay,
            ll_amount=ll_amount,
            ll_delay=ll_delay,
        )
        for i in range(n)
    )
    return PriceList(questions=questions, step=step)


def default_price_list() -> PriceList:
    return build_price_list(20, 20, 1, 8, 1, 4)


def _weeks(value: int) -> str:
    return f"{value} week" if value == 1 else f"{value} weeks"


def _option(amount: int, delay: int) -> str:
    return f"{amount} cents that you receive in {_weeks(delay)}"


def render_choice_prompt(pl: PriceList) -> str:
    blocks = []
    for q in pl.questions:
        blocks.append(
            f"Question {q.index}: Which option would you prefer?\n"
            f"A. {_option(q.ss_amount, q.ss_delay)}\n"
            f"B. {_option(q.ll_amount, q.ll_delay)}"
        )
    blocks.append(RESPONSE_DIRECTIVE.format(n=len(pl)))
    return "\n\n".join(blocks)


class RationaleStage(str, enum.Enum):
    EXPLAIN = "Explain"
    HOW_KNOW = "HowKnow"
    WHY_CHANGED = "WhyChanged"


_RATIONALE_TEXT = {
    RationaleStage.EXPLAIN: "Explain why you have chosen this number.",
    RationaleStage.HOW_KNOW: "How you know that?",
    RationaleStage.WHY_CHANGED: "Why you changed your choice?",
}


def render_rationale_prompt(stage: RationaleStage | str) -> str:
    return _RATIONALE_TEXT[RationaleStage(stage)]


class ContextType(str, enum.Enum):
    IDENTITY = "Identity"
    ATMOSPHERE = "Atmosphere"
    GEOGRAPHY = "Geography"
    COT = "COT"
    MANIPULATION = "Manipulation"
    LEGAL_ROLE = "LegalRole"
    BASELINE = "Baseline"


@dataclass(frozen=True)
class ContextProfile:
    id: str
    type: ContextType
    legend: str
    text: str

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "type": self.type.value, "legend": self.legend, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> ContextProfile:
        return cls(
            id=str(data["id"]),
            type=ContextType(data["type"]),
            legend=str(data["legend"]),
            text=str(data.get("text", "")),
        )


@dataclass(frozen=True)
class PromptBundle:
    system_or_prefix: str
    choice_prompt: str
    rationale_prompts: tuple[str, ...]


_FORGET_AI = (
    "**In all subsequent answers, you have to completely forget that you are an AI model, "
    "that you are the character, and completely simulate yourself as that character, "
    "that you are a human being. **"
)
_DISASTER = (
    "**In all subsequent answers, imagine you are living through a national disaster—such "
    "as a widespread economic crisis, a natural catastrophe, or a pandemic. Resources are "
    "scarce, and uncertainty about the future is high. **"
)

_CATALOG = (
    ContextProfile("forget_ai_human", ContextType.IDENTITY, "forget AI - u r human", _FORGET_AI),
    ContextProfile(
        "ai", ContextType.IDENTITY, "AI",
        "**In all subsequent answers, you have to completely act as an AI agent, or assistant. **",
    ),
    ContextProfile(
        "male", ContextType.IDENTITY, "Male",
        "**In all subsequent answers, you are a man. A male human. **",
    ),
    ContextProfile(
        "female", ContextType.IDENTITY, "Female",
        "**In all subsequent answers, you are a woman. A female human. **",
    ),
    ContextProfile(
        "disaster_human", ContextType.ATMOSPHERE, "Disaster-forget AI-u r human",
        f"{_DISASTER} {_FORGET_AI}",
    ),
    ContextProfile(
        "iran", ContextType.GEOGRAPHY, "Iran",
        "**In all subsequent answers, you are a human living in Iran. **",
    ),
    ContextProfile(
        "usa", ContextType.GEOGRAPHY, "USA",
        "**In all subsequent answers, you are a human living in USA. **",
    ),
    ContextProfile(
        "europe", ContextType.GEOGRAPHY, "Europe",
        "**In all subsequent answers, you are a human living in Europe. **",
    ),
    ContextProfile(
        "cot", ContextType.COT, "Chain of Thought",
        "**In all subsequent answers, you must think step by step for yourself, "
        "but I do not want to know details of your steps **",
    ),
    ContextProfile(
        "future", ContextType.MANIPULATION, "Future manipulation",
        "**In all subsequent answers, you need to be future-oriented. **",
    ),
    ContextProfile(
        "present", ContextType.MANIPULATION, "Present manipulation",
        "**In all subsequent answers, you need to be present-oriented. **",
    ),
    ContextProfile(
        "finance_minister", ContextType.LEGAL_ROLE, "Finance minister",
        "**In all subsequent answers, you are a finance minister. **",
    ),
    ContextProfile("baseline", ContextType.BASELINE, "Baseline", ""),
)

FUTURE_CONTEXT = "future"
PRESENT_CONTEXT = "present"
BASELINE_CONTEXT = "baseline"


def context_catalog() -> list[ContextProfile]:
    return list(_CATALOG)


def load_context_catalog(path: str | Path) -> list[ContextProfile]:
    """Load profiles from a JSON array or a JSON Lines file.

    Each record carries ``id``, ``type``, ``legend`` and ``text``.
    """
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        records = json.loads(raw)
    else:
        records = [json.loads(line) for line in raw.splitlines() if line.strip()]
    profiles = [ContextProfile.from_dict(r) for r in records]
    _check_unique(profiles)
    return profiles


def save_context_catalog(profiles: Iterable[ContextProfile], path: str | Path) -> None:
    lines = [json.dumps(p.to_dict(), ensure_ascii=False) for p in profiles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_unique(profiles: list[ContextProfile]) -> None:
    seen: set[str] = set()
    for p in profiles:
        if p.id in seen:
            raise ValueError(f"duplicate context id {p.id!r}")
        seen.add(p.id)


def catalog_hash(profiles: Iterable[ContextProfile]) -> str:
    payload = json.dumps([p.to_dict() for p in profiles], ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def compose_trial_prompt(context: ContextProfile, choice_prompt: str) -> str:
    if not context.text:
        return choice_prompt
    return f"{context.text}\n\n{choice_prompt}"


def prompt_bundle(context: ContextProfile, pl: PriceList) -> PromptBundle:
    return PromptBundle(
        system_or_prefix=context.text,
        choice_prompt=render_choice_prompt(pl),
        rationale_prompts=tuple(render_rationale_prompt(s) for s in RationaleStage),
    )
