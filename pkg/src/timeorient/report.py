"""Report tables (manipulability ranking, per-context means, sensitivity) and renderers."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .campaign import RunLedger, TrialRecord, evaluate_reply
from .econometrics import (
    DEFAULT_EPSILON,
    CellStats,
    ImputationRule,
    ImputedPreference,
    NoValidTrials,
    TooFewCells,
    TooFewTrials,
    aggregate_cell,
    consistency,
    context_sensitivity,
    impute_discount,
    manipulability,
)
from .instrument import FUTURE_CONTEXT, PRESENT_CONTEXT, ContextType
from .parser import ParsePolicy, SwitchOutcome

NA = "n/a"


class MissingContexts(ValueError):
    pass


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)


@dataclass
class ReportSettings:
    rule: ImputationRule
    policy: ParsePolicy
    epsilon: float = DEFAULT_EPSILON

    def footnotes(self) -> list[str]:
        return [
            f"imputation rule: {self.rule.value}",
            f"parse policy: {self.policy.value}",
            f"orientation epsilon: {self.epsilon:g}",
            "refused and unparseable trials are excluded from means and counted in refusal_rate",
        ]


@dataclass
class ReportBundle:
    manipulability_table: Table | None
    context_means_table: Table
    sensitivity_table: Table
    series_table: Table
    footnotes: list[str]

    def tables(self) -> list[Table]:
        out = [self.context_means_table, self.sensitivity_table, self.series_table]
        if self.manipulability_table is not None:
            out.insert(0, self.manipulability_table)
        return out


def fmt(value: Any) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, Fraction)):
        return f"{float(value):.4f}"
    return str(value)


def _model_order(ledger: RunLedger) -> list[str]:
    configured = [m["model_id"] for m in ledger.header["config"]["models"]]
    seen = {r.model_id for r in ledger.records}
    return [m for m in configured if m in seen] + sorted(seen - set(configured))


def _context_order(ledger: RunLedger) -> list[str]:
    configured = list(ledger.header["config"]["contexts"])
    seen = {r.context_id for r in ledger.records}
    return [c for c in configured if c in seen] + sorted(seen - set(configured))


def _reevaluate(record: TrialRecord, ledger: RunLedger, rule: ImputationRule,
                policy: ParsePolicy) -> tuple[SwitchOutcome, ImputedPreference | None]:
    pl = ledger.price_list()
    if record.error is not None and not record.raw_reply:
        return record.outcome, None
    if policy is ledger.parse_policy:
        outcome = record.outcome
        return outcome, impute_discount(outcome, pl, rule) if outcome.is_valid else None
    return evaluate_reply(record.raw_reply, pl, policy, rule)


def cell_stats(ledger: RunLedger, rule: ImputationRule | str | None = None,
               policy: ParsePolicy | str | None = None) -> dict[tuple[str, str], CellStats]:
    rule = ImputationRule(rule) if rule is not None else ledger.imputation_rule
    policy = ParsePolicy(policy) if policy is not None else ledger.parse_policy
    grouped: dict[tuple[str, str], list] = defaultdict(list)
    for r in sorted(ledger.records, key=lambda r: r.trial_index):
        grouped[(r.model_id, r.context_id)].append(_reevaluate(r, ledger, rule, policy))
    return {key: aggregate_cell(items, *key) for key, items in grouped.items()}


def _settings(ledger: RunLedger, rule, policy, epsilon) -> ReportSettings:
    return ReportSettings(
        rule=ImputationRule(rule) if rule is not None else ledger.imputation_rule,
        policy=ParsePolicy(policy) if policy is not None else ledger.parse_policy,
        epsilon=DEFAULT_EPSILON if epsilon is None else float(epsilon),
    )


def report_manipulability(ledger: RunLedger, rule: ImputationRule | str | None = None,
                          epsilon: float | None = None,
                          policy: ParsePolicy | str | None = None) -> Table:
    settings = _settings(ledger, rule, policy, epsilon)
    stats = cell_stats(ledger, settings.rule, settings.policy)
    pl = ledger.price_list()
    scored, unscored = [], []
    for model in _model_order(ledger):
        fut, pres = stats.get((model, FUTURE_CONTEXT)), stats.get((model, PRESENT_CONTEXT))
        if fut is None or pres is None:
            continue
        try:
            m = manipulability(fut, pres, settings.epsilon, pl)
        except NoValidTrials:
            unscored.append([model, fut.mean_delta, pres.mean_delta, None, None, None])
            continue
        scored.append((m.exact_score, model,
                       [model, m.delta_future, m.delta_present, m.score, m.normalized,
                        m.orientation_class.value]))
    if not scored and not unscored:
        raise MissingContexts(
            f"no model has both {FUTURE_CONTEXT!r} and {PRESENT_CONTEXT!r} cells in the ledger"
        )
    scored.sort(key=lambda t: (-t[0], t[1]))
    unscored.sort(key=lambda row: row[0])
    return Table(
        "manipulability",
        ["model", "delta_future", "delta_present", "score", "normalized", "class"],
        [row for _, _, row in scored] + unscored,
    )


def report_context_means(ledger: RunLedger, rule: ImputationRule | str | None = None,
                         policy: ParsePolicy | str | None = None) -> Table:
    settings = _settings(ledger, rule, policy, None)
    stats = cell_stats(ledger, settings.rule, settings.policy)
    rows = []
    for model in _model_order(ledger):
        for context in _context_order(ledger):
            cell = stats.get((model, context))
            if cell is None:
                continue
            try:
                cls = consistency(cell).value
            except TooFewTrials:
                cls = None
            rows.append([model, context, cell.mean_delta, cell.stdev_delta, cell.n_trials,
                         cell.n_valid, cell.refusal_rate, cell.mode_answer,
                         cell.mode_share if cell.n_valid else None, cell.distinct_answers, cls])
    return Table(
        "context_means",
        ["model", "context", "mean", "stdev", "n_trials", "n_valid", "refusal_rate",
         "mode_answer", "mode_share", "distinct_answers", "consistency"],
        rows,
    )


def report_sensitivity(ledger: RunLedger, rule: ImputationRule | str | None = None,
                       policy: ParsePolicy | str | None = None) -> Table:
    settings = _settings(ledger, rule, policy, None)
    stats = cell_stats(ledger, settings.rule, settings.policy)
    types = ledger.header["config"].get("context_types", {})
    rows = []
    for model in _model_order(ledger):
        groups: dict[str, list[CellStats]] = defaultdict(list)
        for context in _context_order(ledger):
            cell = stats.get((model, context))
            ctype = types.get(context)
            if cell is not None and ctype and ctype != ContextType.BASELINE.value:
                groups[ctype].append(cell)
        for ctype in (t.value for t in ContextType):
            cells = groups.get(ctype)
            if not cells or len(cells) < 2:
                continue
            try:
                gap = context_sensitivity(cells)
            except TooFewCells:
                gap = None
            rows.append([model, ctype, len(cells), gap])
    return Table("sensitivity", ["model", "group", "n_cells", "max_gap"], rows)


def report_series(ledger: RunLedger, rule: ImputationRule | str | None = None,
                  policy: ParsePolicy | str | None = None) -> Table:
    """Long-format per-trial series for plotting."""
    settings = _settings(ledger, rule, policy, None)
    rows = []
    models, contexts = _model_order(ledger), _context_order(ledger)
    ordered = sorted(ledger.records, key=lambda r: (models.index(r.model_id),
                                                    contexts.index(r.context_id), r.trial_index))
    for r in ordered:
        outcome, imputed = _reevaluate(r, ledger, settings.rule, settings.policy)
        rows.append([r.model_id, r.context_id, r.trial_index, outcome.kind.value,
                     outcome.answer, imputed.delta if imputed else None])
    return Table("series", ["model", "context", "trial", "outcome", "answer", "delta_3w"], rows)


def build_report(ledger: RunLedger, rule: ImputationRule | str | None = None,
                 epsilon: float | None = None,
                 policy: ParsePolicy | str | None = None) -> ReportBundle:
    settings = _settings(ledger, rule, policy, epsilon)
    try:
        manip = report_manipulability(ledger, settings.rule, settings.epsilon, settings.policy)
    except MissingContexts:
        manip = None
    footnotes = settings.footnotes()
    if manip is None:
        footnotes.append("manipulability: no model has both future and present cells")
    return ReportBundle(
        manipulability_table=manip,
        context_means_table=report_context_means(ledger, settings.rule, settings.policy),
        sensitivity_table=report_sensitivity(ledger, settings.rule, settings.policy),
        series_table=report_series(ledger, settings.rule, settings.policy),
        footnotes=footnotes,
    )


def render_csv(table: Table, footnotes: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([fmt(v) for v in row])
    for note in footnotes:
        buf.write(f"# {note}\n")
    return buf.getvalue()


def render_markdown(table: Table, footnotes: Sequence[str] = ()) -> str:
    lines = [
        f"## {table.name}",
        "",
        "| " + " | ".join(table.columns) + " |",
        "|" + "---|" * len(table.columns),
    ]
    for row in table.rows:
        lines.append("| " + " | ".join(fmt(v) for v in row) + " |")
    if footnotes:
        lines.append("")
        lines.extend(f"- {note}" for note in footnotes)
    return "\n".join(lines) + "\n"


def write_report(bundle: ReportBundle, out_dir: str | Path, fmt_name: str = "csv") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for table in bundle.tables():
        # plot series is always CSV
        if table.name == "series" or fmt_name == "csv":
            path = out_dir / f"{table.name}.csv"
            path.write_text(render_csv(table, bundle.footnotes), encoding="utf-8")
        else:
            path = out_dir / f"{table.name}.md"
            path.write_text(render_markdown(table, bundle.footnotes), encoding="utf-8")
        written.append(path)
    return written
