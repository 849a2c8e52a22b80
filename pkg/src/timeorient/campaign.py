"""Campaign planning and execution over an append-only JSON Lines ledger.

Ledger layout: line 1 is a header (config snapshot, catalog hash), every
following line is one trial record. Records are only ever appended; a cell
(model, context, trial) already present is skipped on re-execution.
"""
from __future__ import annotations

import hashlib
import json
import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Sequence

import yaml

from .adapters import (
    AdapterError,
    AdapterResponse,
    ChatClient,
    ModelEndpoint,
    Responder,
    SyntheticAgentSpec,
    SyntheticResponder,
    agent_from_dict,
    agent_to_dict,
)
from .econometrics import ImputationRule, ImputedPreference, impute_discount
from .instrument import (
    ContextProfile,
    PriceList,
    RationaleStage,
    build_price_list,
    catalog_hash,
    compose_trial_prompt,
    context_catalog,
    load_context_catalog,
    render_choice_prompt,
    render_rationale_prompt,
)
from .parser import ParsePolicy, PatternSet, SwitchOutcome, parse_switch

logger = logging.getLogger(__name__)

LEDGER_FORMAT = 1
DEFAULT_INSTRUMENT = {"ll_amount": 20, "ss_start": 20, "step": 1, "n": 8, "ss_delay": 1, "ll_delay": 4}


class UnknownContext(ValueError):
    pass


class EmptyModelList(ValueError):
    pass


class LedgerMismatch(ValueError):
    pass


class CorruptRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class ModelSpec:
    """A model under test: a remote endpoint, a synthetic agent, or neither (replay)."""

    model_id: str
    endpoint: ModelEndpoint | None = None
    agent: SyntheticAgentSpec | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"model_id": self.model_id}
        if self.endpoint is not None:
            ep = self.endpoint
            out["endpoint"] = {
                "base_url": ep.base_url, "auth_ref": ep.auth_ref, "rate_limit": ep.rate_limit,
                "timeout": ep.timeout, "temperature": ep.temperature,
                "max_output_tokens": ep.max_output_tokens, "max_retries": ep.max_retries,
            }
        if self.agent is not None:
            out["synthetic"] = agent_to_dict(self.agent)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelSpec:
        model_id = str(data["model_id"])
        endpoint = agent = None
        if data.get("endpoint"):
            ep = dict(data["endpoint"])
            endpoint = ModelEndpoint(model_id=model_id, **ep)
        if data.get("synthetic"):
            agent = agent_from_dict(data["synthetic"])
        if endpoint is not None and agent is not None:
            raise ValueError(f"{model_id}: choose either an endpoint or a synthetic agent")
        return cls(model_id, endpoint, agent)


@dataclass
class CampaignConfig:
    name: str
    models: list[ModelSpec]
    contexts: list[str] | None = None
    trials_per_cell: int = 10
    instrument: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_INSTRUMENT))
    parse_policy: ParsePolicy = ParsePolicy.LENIENT
    imputation_rule: ImputationRule = ImputationRule.PAPER_ENDPOINT
    collect_rationales: bool = False
    max_concurrency: int = 4
    budget: int | None = None
    catalog: list[ContextProfile] = field(default_factory=context_catalog)

    def __post_init__(self) -> None:
        self.parse_policy = ParsePolicy(self.parse_policy)
        self.imputation_rule = ImputationRule(self.imputation_rule)
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be non-negative")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate model ids in {ids}")
        known = {c.id for c in self.catalog}
        unknown = [c for c in (self.contexts or []) if c not in known]
        if unknown:
            raise UnknownContext(f"unknown context ids: {unknown}")
        for m in self.models:
            if m.agent is not None:
                m.agent.check_contexts(known)

    def price_list(self) -> PriceList:
        return build_price_list(**self.instrument)

    def context_profiles(self) -> list[ContextProfile]:
        """Selected contexts, always in catalog order."""
        if self.contexts is None:
            return list(self.catalog)
        wanted = set(self.contexts)
        return [c for c in self.catalog if c.id in wanted]

    def snapshot(self) -> dict:
        """Credential-free description used to match a ledger to its config."""
        return {
            "name": self.name,
            "instrument": dict(self.instrument),
            "models": [m.to_dict() for m in self.models],
            "contexts": [c.id for c in self.context_profiles()],
            "context_types": {c.id: c.type.value for c in self.context_profiles()},
            "trials_per_cell": self.trials_per_cell,
            "parse_policy": self.parse_policy.value,
            "imputation_rule": self.imputation_rule.value,
            "collect_rationales": self.collect_rationales,
            "budget": self.budget,
        }

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | None = None) -> CampaignConfig:
        catalog = context_catalog()
        if data.get("catalog"):
            path = Path(data["catalog"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            catalog = load_context_catalog(path)
        instrument = dict(DEFAULT_INSTRUMENT)
        instrument.update(data.get("instrument") or {})
        return cls(
            name=str(data["name"]),
            models=[ModelSpec.from_dict(m) for m in data.get("models") or []],
            contexts=list(data["contexts"]) if data.get("contexts") else None,
            trials_per_cell=int(data.get("trials_per_cell", 10)),
            instrument=instrument,
            parse_policy=data.get("parse_policy", "lenient"),
            imputation_rule=data.get("imputation_rule", "paper"),
            collect_rationales=bool(data.get("collect_rationales", False)),
            max_concurrency=int(data.get("max_concurrency", 4)),
            budget=data.get("budget"),
            catalog=catalog,
        )


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return CampaignConfig.from_dict(data, base_dir=path.parent)


class Cell(NamedTuple):
    model_id: str
    context_id: str
    trial_index: int


def plan_campaign(config: CampaignConfig) -> list[Cell]:
    if not config.models:
        raise EmptyModelList("campaign has no models")
    contexts = config.context_profiles()
    cells = [
        Cell(m.model_id, c.id, t)
        for m in config.models
        for c in contexts
        for t in range(1, config.trials_per_cell + 1)
    ]
    if config.budget is not None:
        cells = cells[: config.budget]
    return cells


# --- records and ledger ------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    campaign_id: str
    model_id: str
    context_id: str
    trial_index: int
    timestamp: str
    prompt_hash: str
    raw_reply: str
    outcome: SwitchOutcome
    imputed: ImputedPreference | None
    rationale_replies: tuple[str, ...] = ()
    input_tokens: int = 0
    output_tokens: int = 0
    attempts: int = 1
    error: str | None = None

    @property
    def key(self) -> Cell:
        return Cell(self.model_id, self.context_id, self.trial_index)

    def to_dict(self) -> dict:
        return {
            "kind": "trial",
            "campaign_id": self.campaign_id,
            "model_id": self.model_id,
            "context_id": self.context_id,
            "trial_index": self.trial_index,
            "timestamp": self.timestamp,
            "prompt_hash": self.prompt_hash,
            "raw_reply": self.raw_reply,
            "outcome": self.outcome.to_dict(),
            "imputed": self.imputed.to_dict() if self.imputed else None,
            "rationale_replies": list(self.rationale_replies),
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "attempts": self.attempts,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> TrialRecord:
        if data.get("kind") != "trial":
            raise ValueError(f"expected a trial record, got kind={data.get('kind')!r}")
        imputed = data.get("imputed")
        return cls(
            campaign_id=str(data["campaign_id"]),
            model_id=str(data["model_id"]),
            context_id=str(data["context_id"]),
            trial_index=int(data["trial_index"]),
            timestamp=str(data["timestamp"]),
            prompt_hash=str(data["prompt_hash"]),
            raw_reply=str(data["raw_reply"]),
            outcome=SwitchOutcome.from_dict(data["outcome"]),
            imputed=ImputedPreference.from_dict(imputed) if imputed else None,
            rationale_replies=tuple(data.get("rationale_replies", ())),
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
            attempts=int(data.get("attempts", 1)),
            error=data.get("error"),
        )


def _dumps(obj: Mapping) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


class RunLedger:
    """Header plus ordered trial records, mirrored to a JSON Lines file when a path is set."""

    def __init__(self, header: dict, records: Iterable[TrialRecord] = (), path: Path | None = None):
        self.header = header
        self.records: list[TrialRecord] = []
        self._keys: set[Cell] = set()
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        for r in records:
            self._remember(r)

    @classmethod
    def create(cls, config: CampaignConfig, path: str | Path | None = None) -> RunLedger:
        header = {
            "kind": "header",
            "format": LEDGER_FORMAT,
            "campaign_id": config.name,
            "config": config.snapshot(),
            "catalog_hash": catalog_hash(config.catalog),
        }
        ledger = cls(header, path=Path(path) if path is not None else None)
        if ledger.path is not None:
            if ledger.path.exists() and ledger.path.stat().st_size > 0:
                raise FileExistsError(f"{ledger.path} already exists; load it to resume")
            ledger.path.write_text(_dumps(header) + "\n", encoding="utf-8")
        return ledger

    @classmethod
    def open(cls, config: CampaignConfig, path: str | Path) -> RunLedger:
        """Resume an existing ledger file or start a new one."""
        path = Path(path)
        if path.exists() and path.stat().st_size > 0:
            return load_ledger(path)
        return cls.create(config, path)

    @property
    def campaign_id(self) -> str:
        return self.header["campaign_id"]

    def _remember(self, record: TrialRecord) -> None:
        if record.key in self._keys:
            raise ValueError(f"duplicate record for {record.key}")
        self._keys.add(record.key)
        self.records.append(record)

    def __contains__(self, key: object) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TrialRecord) -> None:
        with self._lock:
            self._remember(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(_dumps(record.to_dict()) + "\n")
                    fh.flush()

    def check_matches(self, config: CampaignConfig) -> None:
        snap = config.snapshot()
        if self.header.get("config") != snap:
            raise LedgerMismatch("ledger header was written for a different campaign configuration")
        if self.header.get("catalog_hash") != catalog_hash(config.catalog):
            raise LedgerMismatch("ledger header was written for a different context catalog")

    def price_list(self) -> PriceList:
        return build_price_list(**self.header["config"]["instrument"])

    @property
    def parse_policy(self) -> ParsePolicy:
        return ParsePolicy(self.header["config"]["parse_policy"])

    @property
    def imputation_rule(self) -> ImputationRule:
        return ImputationRule(self.header["config"]["imputation_rule"])

    def dumps(self) -> str:
        lines = [_dumps(self.header)] + [_dumps(r.to_dict()) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def load_ledger(path: str | Path, verify: bool = True) -> RunLedger:
    """Load a ledger; stops at the first undecodable or inconsistent line."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        # no trailing newline: the final write did not complete
        raise CorruptRecord(len(lines), "truncated final line (no terminating newline)")
    if not lines:
        raise CorruptRecord(1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptRecord(1, f"header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("kind") != "header":
        raise CorruptRecord(1, "first line is not a ledger header")

    ledger = RunLedger(header, path=path)
    pl = ledger.price_list()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            record = TrialRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptRecord(lineno, f"undecodable record ({exc})") from None
        if record.key in ledger:
            raise CorruptRecord(lineno, f"duplicate record for {tuple(record.key)}")
        if verify:
            outcome, imputed = evaluate_reply(record.raw_reply, pl, ledger.parse_policy,
                                              ledger.imputation_rule)
            if outcome.kind != record.outcome.kind or outcome.index != record.outcome.index:
                raise CorruptRecord(lineno, f"stored outcome {record.outcome} != recomputed {outcome}")
            stored = record.imputed.delta if record.imputed else None
            fresh = imputed.delta if imputed else None
            if stored != fresh:
                raise CorruptRecord(lineno, f"stored imputation {stored} != recomputed {fresh}")
        ledger._remember(record)
    return ledger


def evaluate_reply(
    reply: str,
    pl: PriceList,
    policy: ParsePolicy,
    rule: ImputationRule,
    patterns: PatternSet | None = None,
) -> tuple[SwitchOutcome, ImputedPreference | None]:
    outcome = parse_switch(reply, len(pl), policy, patterns)
    imputed = impute_discount(outcome, pl, rule) if outcome.is_valid else None
    return outcome, imputed


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# --- execution -----------------------------------------------------------------

def build_responders(config: CampaignConfig, **client_kwargs) -> dict[str, Responder]:
    """Responders for models with an endpoint or synthetic agent; replay models are skipped."""
    pl = config.price_list()
    out: dict[str, Responder] = {}
    for m in config.models:
        if m.endpoint is not None:
            out[m.model_id] = ChatClient(m.endpoint, **client_kwargs)
        elif m.agent is not None:
            out[m.model_id] = SyntheticResponder(m.agent, pl)
    return out


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class _Runner:
    def __init__(self, config: CampaignConfig, responders: Mapping[str, Responder],
                 clock: Callable[[], str]):
        self.config = config
        self.responders = responders
        self.clock = clock
        self.pl = config.price_list()
        self.choice_prompt = render_choice_prompt(self.pl)
        self.contexts = {c.id: c for c in config.catalog}

    def run_trial(self, cell: Cell, previous: TrialRecord | None) -> TrialRecord:
        responder = self.responders[cell.model_id]
        prompt = compose_trial_prompt(self.contexts[cell.context_id], self.choice_prompt)
        messages = [{"role": "user", "content": prompt}]
        base = dict(
            campaign_id=self.config.name, model_id=cell.model_id, context_id=cell.context_id,
            trial_index=cell.trial_index, prompt_hash=prompt_hash(prompt),
        )
        try:
            first = responder.respond(cell.model_id, cell.context_id, cell.trial_index, messages)
        except AdapterError as exc:
            logger.warning("%s/%s/%d failed: %s", *cell, exc)
            return TrialRecord(**base, timestamp=self.clock(), raw_reply="",
                               outcome=SwitchOutcome.unparseable(), imputed=None,
                               attempts=max(exc.attempts, 1), error=f"{type(exc).__name__}: {exc}")

        outcome, imputed = evaluate_reply(first.text, self.pl, self.config.parse_policy,
                                          self.config.imputation_rule)
        attempts, tokens_in, tokens_out = first.attempt, first.input_tokens, first.output_tokens
        rationales: list[str] = []
        error = None
        if self.config.collect_rationales:
            stages = [RationaleStage.EXPLAIN, RationaleStage.HOW_KNOW]
            if (previous is not None and previous.outcome.is_valid and outcome.is_valid
                    and previous.outcome.answer != outcome.answer):
                stages.append(RationaleStage.WHY_CHANGED)
            messages.append({"role": "assistant", "content": first.text})
            for stage in stages:
                messages.append({"role": "user", "content": render_rationale_prompt(stage)})
                try:
                    reply: AdapterResponse = responder.respond(
                        cell.model_id, cell.context_id, cell.trial_index, messages)
                except AdapterError as exc:
                    attempts += max(exc.attempts, 1)
                    error = f"rationale {stage.value}: {type(exc).__name__}: {exc}"
                    break
                attempts += reply.attempt
                tokens_in += reply.input_tokens
                tokens_out += reply.output_tokens
                rationales.append(reply.text)
                messages.append({"role": "assistant", "content": reply.text})
        return TrialRecord(
            **base, timestamp=self.clock(), raw_reply=first.text, outcome=outcome,
            imputed=imputed, rationale_replies=tuple(rationales), input_tokens=tokens_in,
            output_tokens=tokens_out, attempts=attempts, error=error,
        )


def execute(
    plan: Sequence[Cell],
    responders: Mapping[str, Responder],
    ledger: RunLedger,
    config: CampaignConfig,
    clock: Callable[[], str] = _utcnow,
) -> RunLedger:
    """Run every planned cell missing from the ledger.

    Cells of one (model, context) pair run sequentially, since the WhyChanged
    follow-up depends on the previous trial; distinct pairs run concurrently.
    Records are committed by this thread in plan order.
    """
    ledger.check_matches(config)
    missing_models = {c.model_id for c in plan if c not in ledger} - set(responders)
    if missing_models:
        raise ValueError(f"no responder for models {sorted(missing_models)}")

    runner = _Runner(config, responders, clock)
    by_key = {r.key: r for r in ledger.records}
    groups: dict[tuple[str, str], list[tuple[int, Cell]]] = {}
    for pos, cell in enumerate(plan):
        groups.setdefault((cell.model_id, cell.context_id), []).append((pos, cell))

    done: "queue.Queue[tuple[int, TrialRecord | None, BaseException | None]]" = queue.Queue()
    stop = threading.Event()

    def work(items: list[tuple[int, Cell]]) -> None:
        previous: TrialRecord | None = None
        for pos, cell in sorted(items, key=lambda pc: pc[1].trial_index):
            if cell in by_key:
                previous = by_key[cell]
                done.put((pos, None, None))
                continue
            if stop.is_set():
                return
            try:
                record = runner.run_trial(cell, previous)
            except BaseException as exc:  # surfaced in the writer thread
                done.put((pos, None, exc))
                return
            previous = record
            done.put((pos, record, None))

    pending: dict[int, TrialRecord | None] = {}
    next_pos = 0

    def commit(pos: int, record: TrialRecord | None) -> None:
        nonlocal next_pos
        pending[pos] = record
        while next_pos in pending:
            committed = pending.pop(next_pos)
            if committed is not None:
                ledger.append(committed)
            next_pos += 1

    error: BaseException | None = None
    with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
        for items in groups.values():
            pool.submit(work, items)
        try:
            while next_pos < len(plan):
                pos, record, exc = done.get()
                if exc is not None:
                    error = exc
                    break
                commit(pos, record)
        finally:
            stop.set()
    if error is not None:
        # workers have stopped; keep whatever finished in plan order
        while not done.empty():
            pos, record, exc = done.get_nowait()
            if exc is None:
                commit(pos, record)
        raise error
    return ledger


class CostSummary(NamedTuple):
    requests: int
    input_tokens: int
    output_tokens: int


def cost_summary(ledger: RunLedger | Iterable[TrialRecord],
                 models: Iterable[str] = ()) -> dict[str, CostSummary]:
    """Requests (every issued attempt) and token sums per model; ``models`` seeds zero rows."""
    records = ledger.records if isinstance(ledger, RunLedger) else ledger
    totals: dict[str, list[int]] = {m: [0, 0, 0] for m in models}
    for r in records:
        t = totals.setdefault(r.model_id, [0, 0, 0])
        t[0] += r.attempts
        t[1] += r.input_tokens
        t[2] += r.output_tokens
    return {m: CostSummary(*v) for m, v in totals.items()}
