"""Answer producers: remote chat endpoints, synthetic discounters, replayed transcripts.

All three expose ``respond(model_id, context_id, trial_index, messages)`` so the
campaign runner treats them uniformly.
"""
from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Union

import httpx

from .instrument import PriceList
from .parser import SwitchOutcome
from .ratelimit import SlidingWindowLimiter, backoff_delay

logger = logging.getLogger(__name__)

REFUSAL_SENTENCE = (
    "As an AI, I'm unable to express preferences or engage in such decision procedures."
)
NEVER_TOKEN = "never"

Message = dict[str, str]


class AdapterError(Exception):
    """Base for failures while producing an answer."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class AuthError(AdapterError):
    pass


class EndpointTimeout(AdapterError, TimeoutError):
    pass


class RateLimitExhausted(AdapterError):
    pass


class EndpointUnavailable(AdapterError):
    """Server-side (5xx) or transport failures persisted past the retry cap."""


class RequestRejected(AdapterError):
    """Non-retryable 4xx other than authentication."""


class MalformedReply(AdapterError):
    pass


class MissingKey(AdapterError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing key"


@dataclass(frozen=True)
class ModelEndpoint:
    model_id: str
    base_url: str
    auth_ref: str
    rate_limit: int = 60
    timeout: float = 60.0
    temperature: float = 1.0
    max_output_tokens: int = 1024
    max_retries: int = 5
    backoff_base: float = 1.0
    backoff_cap: float = 30.0

    def __post_init__(self) -> None:
        if self.rate_limit <= 0:
            raise ValueError(f"{self.model_id}: rate_limit must be positive")
        if self.timeout <= 0:
            raise ValueError(f"{self.model_id}: timeout must be positive")
        if self.temperature < 0:
            raise ValueError(f"{self.model_id}: temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError(f"{self.model_id}: max_retries must be >= 0")


@dataclass(frozen=True)
class AdapterResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: float = 0.0
    attempt: int = 1

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


class Responder(Protocol):
    def respond(self, model_id: str, context_id: str, trial_index: int,
                messages: list[Message]) -> AdapterResponse: ...


class ChatClient:
    """Chat-completions client for one endpoint with retry and rate limiting."""

    def __init__(
        self,
        endpoint: ModelEndpoint,
        http: httpx.Client | None = None,
        limiter: SlidingWindowLimiter | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        environ: Mapping[str, str] | None = None,
    ):
        self.endpoint = endpoint
        self._http = http or httpx.Client(timeout=endpoint.timeout)
        self.limiter = limiter or SlidingWindowLimiter(endpoint.rate_limit, 60.0, clock, sleep)
        self._sleep = sleep
        self._clock = clock
        self._environ = os.environ if environ is None else environ

    def _credential(self) -> str:
        key = self._environ.get(self.endpoint.auth_ref)
        if not key:
            raise AuthError(
                f"{self.endpoint.model_id}: credential variable {self.endpoint.auth_ref} is not set"
            )
        return key

    def _body(self, messages: list[Message]) -> dict:
        return {
            "model": self.endpoint.model_id,
            "messages": messages,
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_output_tokens,
        }

    def complete(self, messages: list[Message]) -> AdapterResponse:
        if not messages or not any(m.get("content") for m in messages):
            raise ValueError("prompt must be non-empty")
        key = self._credential()
        ep = self.endpoint
        url = ep.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}
        total = ep.max_retries + 1
        last_error: AdapterError | None = None

        for attempt in range(1, total + 1):
            self.limiter.acquire()
            started = self._clock()
            retry_after = None
            try:
                resp = self._http.post(url, json=self._body(messages), headers=headers,
                                       timeout=ep.timeout)
            except httpx.TimeoutException as exc:
                last_error = EndpointTimeout(f"{ep.model_id}: timed out ({exc})", attempt)
            except httpx.TransportError as exc:
                last_error = EndpointUnavailable(f"{ep.model_id}: transport error ({exc})", attempt)
            else:
                status = resp.status_code
                if status in (401, 403):
                    raise AuthError(f"{ep.model_id}: credential rejected (HTTP {status})", attempt)
                if status == 200:
                    return self._decode(resp, attempt, (self._clock() - started) * 1000.0)
                if status == 429:
                    last_error = RateLimitExhausted(f"{ep.model_id}: rate limited (HTTP 429)", attempt)
                elif status == 408:
                    last_error = EndpointTimeout(f"{ep.model_id}: request timeout (HTTP 408)", attempt)
                elif status >= 500:
                    last_error = EndpointUnavailable(f"{ep.model_id}: server error (HTTP {status})", attempt)
                else:
                    raise RequestRejected(f"{ep.model_id}: HTTP {status}: {resp.text[:200]}", attempt)
                retry_after = _retry_after(resp)
            if attempt < total:
                delay = backoff_delay(attempt, ep.backoff_base, ep.backoff_cap, retry_after)
                logger.info("%s: attempt %d failed (%s); retrying in %.1fs",
                            ep.model_id, attempt, last_error, delay)
                self._sleep(delay)
        assert last_error is not None
        last_error.attempts = total
        raise last_error

    def _decode(self, resp: httpx.Response, attempt: int, latency_ms: float) -> AdapterResponse:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedReply(f"{self.endpoint.model_id}: unreadable reply ({exc})", attempt) from exc
        if not isinstance(text, str) or not text.strip():
            raise MalformedReply(f"{self.endpoint.model_id}: reply carried no text", attempt)
        usage = payload.get("usage") or {}
        return AdapterResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0) or 0),
            output_tokens=int(usage.get("completion_tokens", 0) or 0),
            latency_ms=latency_ms,
            attempt=attempt,
        )

    def respond(self, model_id: str, context_id: str, trial_index: int,
                messages: list[Message]) -> AdapterResponse:
        return self.complete(messages)


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


def send(endpoint: ModelEndpoint, prompt: str, **kwargs) -> AdapterResponse:
    """One-shot single-turn request; builds a throwaway client."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return ChatClient(endpoint, **kwargs).complete([{"role": "user", "content": prompt}])


# --- synthetic discounters -------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    weekly_factor: Real

    def __post_init__(self) -> None:
        if not 0 < self.weekly_factor <= 1:
            raise ValueError(f"weekly_factor must lie in (0, 1], got {self.weekly_factor}")


@dataclass(frozen=True)
class QuasiHyperbolic:
    beta: Real
    weekly_factor: Real

    def __post_init__(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0 < self.weekly_factor <= 1:
            raise ValueError(f"weekly_factor must lie in (0, 1], got {self.weekly_factor}")


@dataclass(frozen=True)
class FixedAnswer:
    k: int


@dataclass(frozen=True)
class Scattered:
    seed: int
    support: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ValueError("support must be non-empty")
        object.__setattr__(self, "support", tuple(sorted(set(self.support))))


@dataclass(frozen=True)
class Refuser:
    pass


AgentKind = Union[Exponential, QuasiHyperbolic, FixedAnswer, Scattered, Refuser]


@dataclass(frozen=True)
class SyntheticAgentSpec:
    kind: AgentKind
    context_overrides: Mapping[str, AgentKind] = field(default_factory=dict)
    tie_break: str = "PreferSooner"

    def __post_init__(self) -> None:
        if self.tie_break != "PreferSooner":
            raise ValueError("only the PreferSooner tie-break is supported")

    def kind_for(self, context_id: str | None) -> AgentKind:
        if context_id is not None and context_id in self.context_overrides:
            return self.context_overrides[context_id]
        return self.kind

    def check_contexts(self, known: Iterable[str]) -> None:
        unknown = set(self.context_overrides) - set(known)
        if unknown:
            raise ValueError(f"overrides reference unknown contexts: {sorted(unknown)}")


def _value(kind: Exponential | QuasiHyperbolic, amount: int, delay: int):
    if isinstance(kind, Exponential):
        return amount * kind.weekly_factor ** delay
    if delay == 0:
        return amount
    return amount * kind.beta * kind.weekly_factor ** delay


def synthetic_switch_oracle(agent: SyntheticAgentSpec | AgentKind, pl: PriceList,
                            context_id: str | None = None) -> SwitchOutcome:
    """First question where the later option is strictly better; ties go to A."""
    kind = agent.kind_for(context_id) if isinstance(agent, SyntheticAgentSpec) else agent
    if not isinstance(kind, (Exponential, QuasiHyperbolic)):
        raise TypeError(f"{type(kind).__name__} agents do not choose by utility")
    for q in pl.questions:
        if _value(kind, q.ll_amount, q.ll_delay) > _value(kind, q.ss_amount, q.ss_delay):
            return SwitchOutcome.switch_at(q.index)
    return SwitchOutcome.never()


def _scattered_draw(kind: Scattered, trial: int) -> int:
    return random.Random(kind.seed * 1_000_003 + trial).choice(kind.support)


def synthetic_answer(agent: SyntheticAgentSpec, pl: PriceList,
                     context_id: str | None = None, trial: int = 1) -> str:
    kind = agent.kind_for(context_id)
    if isinstance(kind, (Exponential, QuasiHyperbolic)):
        outcome = synthetic_switch_oracle(kind, pl)
        return str(outcome.index) if outcome.index is not None else NEVER_TOKEN
    if isinstance(kind, FixedAnswer):
        return str(kind.k)
    if isinstance(kind, Scattered):
        return str(_scattered_draw(kind, trial))
    return REFUSAL_SENTENCE


def _describe(kind: AgentKind) -> str:
    if isinstance(kind, Exponential):
        return f"exponential discounting with weekly factor {float(kind.weekly_factor):g}"
    if isinstance(kind, QuasiHyperbolic):
        return (f"quasi-hyperbolic discounting with beta {float(kind.beta):g} "
                f"and weekly factor {float(kind.weekly_factor):g}")
    if isinstance(kind, FixedAnswer):
        return f"a fixed answer of {kind.k}"
    if isinstance(kind, Scattered):
        return f"a seeded draw from {list(kind.support)}"
    return "no preference"


def _count_tokens(text: str) -> int:
    return len(text.split())


class SyntheticResponder:
    """Synthetic agent keyed by model id; follow-up turns get a canned rationale."""

    def __init__(self, agent: SyntheticAgentSpec, pl: PriceList):
        self.agent = agent
        self.pl = pl

    def respond(self, model_id: str, context_id: str, trial_index: int,
                messages: list[Message]) -> AdapterResponse:
        turn = sum(1 for m in messages if m["role"] == "user")
        if turn <= 1:
            text = synthetic_answer(self.agent, self.pl, context_id, trial_index)
        elif isinstance(self.agent.kind_for(context_id), Refuser):
            text = REFUSAL_SENTENCE
        else:
            text = f"The answer follows from {_describe(self.agent.kind_for(context_id))}."
        prompt_tokens = sum(_count_tokens(m["content"]) for m in messages)
        return AdapterResponse(text, prompt_tokens, _count_tokens(text), 0.0, 1)


# --- replay ----------------------------------------------------------------

ReplayKey = tuple[str, str, int]


@dataclass(frozen=True)
class ReplayEntry:
    reply: str
    rationales: tuple[str, ...] = ()
    input_tokens: int = 0
    output_tokens: int = 0


class ReplayTranscript:
    """Recorded replies keyed by (model_id, context_id, trial_index)."""

    def __init__(self, entries: Mapping[ReplayKey, ReplayEntry | str] | None = None):
        self._entries: dict[ReplayKey, ReplayEntry] = {}
        for key, entry in (entries or {}).items():
            self.add(key, entry)

    def add(self, key: ReplayKey, entry: ReplayEntry | str) -> None:
        key = (str(key[0]), str(key[1]), int(key[2]))
        if key in self._entries:
            raise ValueError(f"duplicate replay key {key}")
        self._entries[key] = ReplayEntry(entry) if isinstance(entry, str) else entry

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: ReplayKey) -> ReplayEntry:
        try:
            return self._entries[key]
        except KeyError:
            raise MissingKey(f"no recorded reply for {key}") from None

    @classmethod
    def load(cls, path: str | Path) -> ReplayTranscript:
        """Read a JSON Lines transcript; one object per reply."""
        transcript = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            transcript.add(
                (rec["model_id"], rec["context_id"], rec["trial_index"]),
                ReplayEntry(
                    reply=rec["reply"],
                    rationales=tuple(rec.get("rationales", ())),
                    input_tokens=int(rec.get("input_tokens", 0)),
                    output_tokens=int(rec.get("output_tokens", 0)),
                ),
            )
        return transcript

    def save(self, path: str | Path) -> None:
        lines = []
        for (model_id, context_id, trial), e in self._entries.items():
            lines.append(json.dumps({
                "model_id": model_id, "context_id": context_id, "trial_index": trial,
                "reply": e.reply, "rationales": list(e.rationales),
                "input_tokens": e.input_tokens, "output_tokens": e.output_tokens,
            }, ensure_ascii=False))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def replay_answer(t: ReplayTranscript, key: ReplayKey) -> str:
    return t.get(key).reply


class ReplayResponder:
    def __init__(self, transcript: ReplayTranscript):
        self.transcript = transcript

    def respond(self, model_id: str, context_id: str, trial_index: int,
                messages: list[Message]) -> AdapterResponse:
        entry = self.transcript.get((model_id, context_id, trial_index))
        turn = sum(1 for m in messages if m["role"] == "user")
        if turn <= 1:
            return AdapterResponse(entry.reply, entry.input_tokens, entry.output_tokens)
        if turn - 2 >= len(entry.rationales):
            raise MissingKey(f"no recorded rationale turn {turn} for {(model_id, context_id, trial_index)}")
        return AdapterResponse(entry.rationales[turn - 2])


# --- parsing agent specs from config ----------------------------------------

def _number(value) -> Real:
    # decimal strings become exact fractions so ties stay exact
    if isinstance(value, str):
        return Fraction(value)
    return value


def agent_kind_from_dict(data: Mapping) -> AgentKind:
    kind = str(data["kind"]).lower()
    if kind == "exponential":
        return Exponential(_number(data["weekly_factor"]))
    if kind in ("quasihyperbolic", "quasi_hyperbolic"):
        return QuasiHyperbolic(_number(data["beta"]), _number(data["weekly_factor"]))
    if kind in ("fixed", "fixedanswer", "fixed_answer"):
        return FixedAnswer(int(data["k"]))
    if kind == "scattered":
        return Scattered(int(data["seed"]), tuple(int(v) for v in data["support"]))
    if kind == "refuser":
        return Refuser()
    raise ValueError(f"unknown synthetic agent kind {data['kind']!r}")


def agent_kind_to_dict(kind: AgentKind) -> dict:
    def num(v):
        return str(v) if isinstance(v, Fraction) else v
    if isinstance(kind, Exponential):
        return {"kind": "exponential", "weekly_factor": num(kind.weekly_factor)}
    if isinstance(kind, QuasiHyperbolic):
        return {"kind": "quasihyperbolic", "beta": num(kind.beta), "weekly_factor": num(kind.weekly_factor)}
    if isinstance(kind, FixedAnswer):
        return {"kind": "fixed", "k": kind.k}
    if isinstance(kind, Scattered):
        return {"kind": "scattered", "seed": kind.seed, "support": list(kind.support)}
    return {"kind": "refuser"}


def agent_from_dict(data: Mapping) -> SyntheticAgentSpec:
    overrides = {str(k): agent_kind_from_dict(v) for k, v in (data.get("overrides") or {}).items()}
    return SyntheticAgentSpec(agent_kind_from_dict(data), overrides)


def agent_to_dict(agent: SyntheticAgentSpec) -> dict:
    out = agent_kind_to_dict(agent.kind)
    if agent.context_overrides:
        out["overrides"] = {k: agent_kind_to_dict(v) for k, v in sorted(agent.context_overrides.items())}
    return out
