import csv
import io
import re
from fractions import Fraction
from functools import partial
from pathlib import Path

import pytest

from timeorient import cli
from timeorient.adapters import (
    Exponential,
    FixedAnswer,
    Refuser,
    ReplayResponder,
    ReplayTranscript,
    SyntheticAgentSpec,
)
from timeorient.campaign import CampaignConfig, ModelSpec, RunLedger, build_responders, execute, plan_campaign
from timeorient.econometrics import ImputedPreference, impute_discount
from timeorient.report import (
    MissingContexts,
    build_report,
    render_csv,
    render_markdown,
    report_context_means,
    report_manipulability,
    report_sensitivity,
    write_report,
)
from timeorient.selfcheck import synth_check

CLOCK = lambda: "2025-01-01T00:00:00+00:00"  # noqa: E731


def _spec(model_id, kind, overrides=None):
    return ModelSpec(model_id, agent=SyntheticAgentSpec(kind, overrides or {}))


def _ledger(models, contexts=None, trials=3, **kw):
    config = CampaignConfig(name="r", models=models, contexts=contexts, trials_per_cell=trials, **kw)
    ledger = RunLedger.create(config)
    return execute(plan_campaign(config), build_responders(config), ledger, config, CLOCK)


MANIPULABLE = _spec("manip", Exponential(Fraction(9, 10)),
                    {"future": Exponential(1), "present": Exponential(Fraction(1, 2))})
FIXED = _spec("fixed", FixedAnswer(5))
INVERTED = _spec("inverted", Exponential(Fraction(9, 10)),
                 {"future": Exponential(Fraction(1, 2)), "present": Exponential(1)})


def _rows(table):
    return {row[0]: row for row in table.rows}


# --- report tables --------------------------------------------------------------------

def test_manipulability_ranking():
    ledger = _ledger([FIXED, INVERTED, MANIPULABLE], contexts=["future", "present"])
    table = report_manipulability(ledger)
    assert [r[0] for r in table.rows] == ["manip", "fixed", "inverted"]
    top = table.rows[0]
    assert (top[1], top[2]) == (0.95, 0.62)
    assert top[3] == pytest.approx(0.33) and top[4] == 1.0 and top[5] == "Manipulable"
    fixed, inverted = _rows(table)["fixed"], _rows(table)["inverted"]
    assert fixed[3] == 0.0 and fixed[5] == "Inert"
    assert inverted[3] < 0 and inverted[5] == "Inverted"


def test_manipulability_tie_break_by_model_id():
    ledger = _ledger([_spec("b", FixedAnswer(3)), _spec("a", FixedAnswer(4))], contexts=["future", "present"])
    assert [r[0] for r in report_manipulability(ledger).rows] == ["a", "b"]


def test_manipulability_refuser_row_last():
    ledger = _ledger([_spec("r", Refuser()), MANIPULABLE], contexts=["future", "present"])
    rows = report_manipulability(ledger).rows
    assert rows[0][0] == "manip"
    assert rows[1] == ["r", None, None, None, None, None]


def test_manipulability_missing_contexts():
    ledger = _ledger([FIXED], contexts=["iran", "usa"])
    with pytest.raises(MissingContexts):
        report_manipulability(ledger)
    assert build_report(ledger).manipulability_table is None


def test_context_means_full_catalog():
    ledger = _ledger([MANIPULABLE], trials=2)
    table = report_context_means(ledger)
    assert len(table.rows) == 13
    assert [r[1] for r in table.rows][-1] == "baseline"
    by_ctx = {r[1]: r for r in table.rows}
    assert by_ctx["future"][2] == Fraction(19, 20)
    assert by_ctx["iran"][10] == "Identical"


def test_context_means_refuser_renders_na():
    ledger = _ledger([_spec("r", Refuser())], contexts=["baseline"])
    table = report_context_means(ledger)
    (row,) = table.rows
    assert row[5] == 0 and row[6] == 1.0 and row[2] is None
    line = render_csv(table).splitlines()[1]
    assert line.startswith("r,baseline,n/a,n/a,3,0,1.0000,n/a,n/a,0,n/a")


def test_replay_identical_is_identical():
    transcript = ReplayTranscript({("gemma", "baseline", i): "5" for i in range(1, 11)})
    config = CampaignConfig(name="replay", models=[ModelSpec("gemma")], contexts=["baseline"], trials_per_cell=10)
    ledger = execute(plan_campaign(config), {"gemma": ReplayResponder(transcript)},
                     RunLedger.create(config), config, CLOCK)
    (row,) = report_context_means(ledger).rows
    assert row[10] == "Identical" and row[2] == Fraction(4, 5)


def test_sensitivity_groups():
    ledger = _ledger([_spec("m", Exponential(Fraction(9, 10)), {"iran": Exponential(1)})], trials=1)
    rows = {(r[0], r[1]): r for r in report_sensitivity(ledger).rows}
    assert set(g for _, g in rows) == {"Identity", "Geography", "Manipulation"}
    assert rows[("m", "Geography")][2] == 3
    assert rows[("m", "Geography")][3] == pytest.approx(0.95 - 0.70)
    assert rows[("m", "Identity")][3] == 0.0


def test_rule_switch_changes_values():
    ledger = _ledger([MANIPULABLE], contexts=["future", "present"])
    paper = report_manipulability(ledger).rows[0]
    mid = report_manipulability(ledger, rule="midpoint").rows[0]
    assert (mid[1], mid[2]) == (0.975, 0.625)
    assert mid[3] != paper[3]


def test_footnotes_always_state_settings():
    bundle = build_report(_ledger([FIXED], contexts=["future", "present"]), rule="midpoint",
                          epsilon=0.05, policy="strict")
    text = "\n".join(bundle.footnotes)
    assert "imputation rule: midpoint" in text
    assert "parse policy: strict" in text
    assert "orientation epsilon: 0.05" in text


def _md_values(text):
    rows = [line for line in text.splitlines() if line.startswith("| ")][1:]
    return [[c.strip() for c in line.strip("|").split("|")] for line in rows]


def test_csv_and_markdown_agree():
    bundle = build_report(_ledger([MANIPULABLE, FIXED, _spec("r", Refuser())]))
    for table in bundle.tables():
        csv_rows = [r for r in csv.reader(io.StringIO(render_csv(table))) if r and not r[0].startswith("#")]
        assert csv_rows[1:] == _md_values(render_markdown(table))


def test_report_files_deterministic(tmp_path):
    ledger = _ledger([MANIPULABLE, FIXED])
    for fmt_name in ("csv", "md"):
        a = write_report(build_report(ledger), tmp_path / f"a-{fmt_name}", fmt_name)
        b = write_report(build_report(ledger), tmp_path / f"b-{fmt_name}", fmt_name)
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()
            assert "imputation rule: paper" in pa.read_text()


# --- self check ---------------------------------------------------------------------------

def test_synth_check_passes():
    result = synth_check()
    assert result.ok and result.checked > 0
    assert any("27/61" in n for n in result.notes)


def _perturbed(outcome, pl, rule):
    imp = impute_discount(outcome, pl, rule)
    return ImputedPreference(imp.delta + Fraction(1, 100), imp.flags, imp.gap_weeks)


def test_synth_check_detects_perturbation():
    result = synth_check(imputer=_perturbed)
    assert not result.ok
    assert all(f.startswith("round-trip") for f in result.failures)


# --- CLI ----------------------------------------------------------------------------------

def _config_file(tmp_path, body):
    path = tmp_path / "campaign.yaml"
    path.write_text(body)
    return str(path)


SYNTH_CONFIG = (
    "name: cli\n"
    "trials_per_cell: 2\n"
    "contexts: [future, present, iran, usa]\n"
    "models:\n"
    "  - model_id: manip\n"
    "    synthetic:\n"
    "      kind: exponential\n"
    "      weekly_factor: '0.9'\n"
    "      overrides:\n"
    "        future: {kind: exponential, weekly_factor: 1}\n"
    "        present: {kind: exponential, weekly_factor: '0.5'}\n"
)


def test_cli_synth_check(capsys):
    assert cli.main(["synth-check"]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "front-end delay" in out


def test_cli_synth_check_perturbed(monkeypatch, capsys):
    monkeypatch.setattr(cli, "synth_check", partial(synth_check, imputer=_perturbed))
    assert cli.main(["synth-check"]) == 1
    assert "FAIL round-trip" in capsys.readouterr().out


def test_cli_contexts(capsys):
    assert cli.main(["contexts"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["id", "type", "legend", "text"] and len(rows) == 14


def test_cli_plan(tmp_path, capsys):
    assert cli.main(["plan", "--config", _config_file(tmp_path, SYNTH_CONFIG)]) == 0
    out = capsys.readouterr().out
    assert "manip,future,1" in out and "# cells: 8" in out


def test_cli_run_report_impute(tmp_path, capsys):
    config = _config_file(tmp_path, SYNTH_CONFIG)
    ledger = str(tmp_path / "ledger.jsonl")
    assert cli.main(["run", "--config", config, "--ledger", ledger]) == 0
    assert "appended 8 records" in capsys.readouterr().out
    assert cli.main(["run", "--config", config, "--ledger", ledger]) == 0
    assert "appended 0 records" in capsys.readouterr().out

    assert cli.main(["report", "--ledger", ledger, "--format", "md"]) == 0
    out = capsys.readouterr().out
    assert "| manip | 0.9500 | 0.6200 | 0.3300 | 1.0000 | Manipulable |" in out

    out_dir = tmp_path / "report"
    assert cli.main(["report", "--ledger", ledger, "--out", str(out_dir)]) == 0
    assert sorted(p.name for p in out_dir.iterdir()) == [
        "context_means.csv", "manipulability.csv", "sensitivity.csv", "series.csv"]

    mid = str(tmp_path / "mid.jsonl")
    assert cli.main(["impute", "--ledger", ledger, "--rule", "midpoint", "--out", mid]) == 0
    capsys.readouterr()
    assert cli.main(["report", "--ledger", mid]) == 0
    out = capsys.readouterr().out
    assert "manip,0.9750,0.6250,0.3500" in out
    assert "# imputation rule: midpoint" in out


def test_cli_replay(tmp_path, capsys):
    transcript = ReplayTranscript({("gemma", c, i): "5" for c in ("future", "present") for i in (1, 2)})
    tpath = tmp_path / "t.jsonl"
    transcript.save(tpath)
    config = _config_file(tmp_path, "name: rp\ntrials_per_cell: 2\ncontexts: [future, present]\n"
                                    "models: [{model_id: gemma}]\n")
    ledger = str(tmp_path / "ledger.jsonl")
    assert cli.main(["replay", "--config", config, "--transcript", str(tpath), "--ledger", ledger]) == 0
    assert "gemma: requests=4" in capsys.readouterr().out


def test_cli_replay_missing_entry(tmp_path, capsys):
    tpath = tmp_path / "t.jsonl"
    ReplayTranscript({("gemma", "future", 1): "5"}).save(tpath)
    config = _config_file(tmp_path, "name: rp\ntrials_per_cell: 2\ncontexts: [future]\n"
                                    "models: [{model_id: gemma}]\n")
    ledger = tmp_path / "ledger.jsonl"
    assert cli.main(["replay", "--config", config, "--transcript", str(tpath), "--ledger", str(ledger)]) == 0
    text = ledger.read_text()
    assert text.count('"kind":"trial"') == 2 and "MissingKey" in text


@pytest.mark.parametrize("argv", [
    ["report"],
    ["plan", "--config", "/nonexistent.yaml"],
    ["impute", "--ledger", "/nonexistent.jsonl"],
])
def test_cli_usage_errors(argv, capsys):
    assert cli.main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_argparse_errors():
    with pytest.raises(SystemExit) as info:
        cli.main(["report", "--rule", "bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def test_cli_validation_errors(tmp_path, capsys):
    bad = _config_file(tmp_path, "name: x\ncontexts: [mars]\nmodels: [{model_id: a}]\n")
    assert cli.main(["plan", "--config", bad]) == 1
    assert "mars" in capsys.readouterr().err
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"kind":"header"')
    assert cli.main(["report", "--ledger", str(broken)]) == 1
    assert re.search(r"line 1", capsys.readouterr().err)


def test_shipped_demo_config(capsys):
    path = Path(__file__).resolve().parents[1] / "configs" / "synthetic_demo.yaml"
    assert cli.main(["plan", "--config", str(path)]) == 0
    assert "# cells: 130" in capsys.readouterr().out
