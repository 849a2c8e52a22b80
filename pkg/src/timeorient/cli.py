"""Command-line entry point: ``timeorient <subcommand>``.

Exit codes: 0 success, 1 assertion or validation failure, 2 bad invocation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .adapters import ReplayResponder, ReplayTranscript
from .campaign import (
    CampaignConfig,
    CorruptRecord,
    EmptyModelList,
    LedgerMismatch,
    RunLedger,
    UnknownContext,
    build_responders,
    cost_summary,
    evaluate_reply,
    execute,
    load_config,
    load_ledger,
    plan_campaign,
)
from .econometrics import ImputationRule
from .instrument import context_catalog, load_context_catalog
from .parser import ParsePolicy
from .report import MissingContexts, Table, build_report, render_csv, render_markdown, write_report
from .selfcheck import synth_check

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(table: Table, fmt: str, footnotes=()) -> None:
    render = render_markdown if fmt == "md" else render_csv
    sys.stdout.write(render(table, footnotes))


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: {p} does not exist")
    return p


def cmd_contexts(args) -> int:
    profiles = load_context_catalog(args.catalog) if args.catalog else context_catalog()
    table = Table("contexts", ["id", "type", "legend", "text"],
                  [[p.id, p.type.value, p.legend, p.text] for p in profiles])
    _emit(table, args.format)
    return EXIT_OK


def cmd_plan(args) -> int:
    config = load_config(_require(args.config, "--config"))
    cells = plan_campaign(config)
    table = Table("plan", ["model", "context", "trial"], [list(c) for c in cells])
    _emit(table, args.format, [f"cells: {len(cells)}"])
    return EXIT_OK


def _print_costs(ledger: RunLedger) -> None:
    for model, c in cost_summary(ledger).items():
        print(f"{model}: requests={c.requests} input_tokens={c.input_tokens} "
              f"output_tokens={c.output_tokens}")


def _run(config: CampaignConfig, ledger_path: str | None, responders) -> int:
    if not ledger_path:
        raise UsageError("--ledger is required")
    ledger = RunLedger.open(config, ledger_path)
    plan = plan_campaign(config)
    before = len(ledger)
    execute(plan, responders, ledger, config)
    print(f"appended {len(ledger) - before} records; ledger holds {len(ledger)}")
    _print_costs(ledger)
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(_require(args.config, "--config"))
    if args.max_concurrency:
        config.max_concurrency = args.max_concurrency
    return _run(config, args.ledger, build_responders(config))


def cmd_replay(args) -> int:
    config = load_config(_require(args.config, "--config"))
    transcript = ReplayTranscript.load(_require(args.transcript, "--transcript"))
    responder = ReplayResponder(transcript)
    return _run(config, args.ledger, {m.model_id: responder for m in config.models})


def cmd_impute(args) -> int:
    ledger = load_ledger(_require(args.ledger, "--ledger"))
    if not args.out:
        raise UsageError("--out is required")
    rule = ImputationRule(args.rule) if args.rule else ledger.imputation_rule
    policy = ParsePolicy(args.policy) if args.policy else ledger.parse_policy
    header = dict(ledger.header)
    header["config"] = dict(header["config"], imputation_rule=rule.value, parse_policy=policy.value)
    pl = ledger.price_list()
    out = RunLedger(header)
    for r in ledger.records:
        if r.error is not None and not r.raw_reply:
            out.append(r)
            continue
        outcome, imputed = evaluate_reply(r.raw_reply, pl, policy, rule)
        out.append(replace(r, outcome=outcome, imputed=imputed))
    out.save(args.out)
    print(f"re-imputed {len(out)} records under rule={rule.value} policy={policy.value} -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    ledger = load_ledger(_require(args.ledger, "--ledger"))
    bundle = build_report(ledger, args.rule, args.epsilon, args.policy)
    if args.out:
        for path in write_report(bundle, args.out, args.format):
            print(path)
    else:
        for table in bundle.tables():
            if table.name != "series":
                _emit(table, args.format, bundle.footnotes)
                print()
    return EXIT_OK


def cmd_synth_check(args) -> int:
    result = synth_check()
    for failure in result.failures:
        print(f"FAIL {failure}")
    for note in result.notes:
        print(f"note: {note}")
    status = "ok" if result.ok else f"{len(result.failures)} failure(s)"
    print(f"synth-check: {result.checked} assertions, {status}")
    return EXIT_OK if result.ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeorient",
                                     description="Time-orientation probing of language models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "config" in flags:
            p.add_argument("--config", help="campaign config (YAML or JSON)")
        if "ledger" in flags:
            p.add_argument("--ledger", help="ledger file (JSON Lines)")
        if "rule" in flags:
            p.add_argument("--rule", choices=[r.value for r in ImputationRule])
        if "policy" in flags:
            p.add_argument("--policy", choices=[p.value for p in ParsePolicy])
        if "epsilon" in flags:
            p.add_argument("--epsilon", type=float)
        if "format" in flags:
            p.add_argument("--format", choices=["csv", "md"], default="csv")
        if "out" in flags:
            p.add_argument("--out")

    p = sub.add_parser("contexts", help="list the context catalog")
    p.add_argument("--catalog", help="custom catalog file")
    common(p, "format")
    p.set_defaults(func=cmd_contexts)

    p = sub.add_parser("plan", help="dry-run cell listing")
    common(p, "config", "format")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="execute or resume a campaign")
    common(p, "config", "ledger")
    p.add_argument("--max-concurrency", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="run a campaign against a recorded transcript")
    common(p, "config", "ledger")
    p.add_argument("--transcript", help="JSON Lines transcript")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("impute", help="re-impute a ledger under another rule or policy")
    common(p, "ledger", "rule", "policy", "out")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("report", help="manipulability, context means and sensitivity tables")
    common(p, "ledger", "rule", "policy", "epsilon", "format", "out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth-check", help="oracle round-trip and beta-invariance sweeps")
    p.set_defaults(func=cmd_synth_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptRecord, LedgerMismatch, UnknownContext, EmptyModelList, MissingContexts,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
