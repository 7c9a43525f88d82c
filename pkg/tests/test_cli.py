import io
import json
import subprocess
import sys

import pytest

from rebench.cli import main


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def test_no_verb_is_usage_error(capsys):
    assert run([], capsys)[0] == 1


def test_unknown_option_is_usage_error(capsys):
    code, _, err = run(["list-patterns", "--format", "yaml"], capsys)
    assert code == 1 and "invalid choice" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rebench", "list-patterns"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.count("\n") == 5


def test_list_patterns_json(capsys):
    code, out, _ = run(["list-patterns", "--format", "json"], capsys)
    assert code == 0 and len(json.loads(out)) == 5


def test_ingest(tmp_path, data_dir, capsys):
    code, out, _ = run(["ingest", "--promise", str(data_dir / "requirements_sample.csv"),
                        "--srs", str(data_dir / "themas.txt"), "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "requirements_sample.csv: 60 total, 20 F, 40 NF" in out
    assert "THEMAS: 20 requirements" in out
    assert (tmp_path / "themas.truth.json").is_file() and (tmp_path / "themas.clean.txt").is_file()
    assert "label" in (tmp_path / "requirements_sample.unlabeled.csv").read_text().splitlines()[0]


def test_ingest_needs_input(capsys):
    assert run(["ingest"], capsys)[0] == 1


def test_ingest_missing_file(tmp_path, capsys):
    code, _, err = run(["ingest", "--promise", str(tmp_path / "nope.csv")], capsys)
    assert code == 2 and "not found" in err


def test_render_classification(data_dir, capsys):
    code, out, _ = run(["render", "--pattern", "Template", "--task", "classification",
                        "--promise", str(data_dir / "requirements_sample.csv"), "--ids", "1,2"], capsys)
    assert code == 0 and out.startswith("Read the following list of requirements")
    assert out.count("\n1. ") == 1 and "\n2. " in out


def test_render_trace(data_dir, capsys):
    code, out, _ = run(["render", "--pattern", "Persona", "--task", "Traceability",
                        "--srs", str(data_dir / "themas.txt"), "--query", "3.2.1"], capsys)
    assert code == 0 and "requirement 3.2.1" in out and "http" not in out


@pytest.mark.parametrize("argv", [
    ["render", "--pattern", "Nope", "--task", "Traceability"],
    ["render", "--pattern", "Persona", "--task", "Traceability"],
])
def test_render_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 1


def test_render_unknown_query(data_dir, capsys):
    code, _, err = run(["render", "--pattern", "Persona", "--task", "Traceability",
                        "--srs", str(data_dir / "themas.txt"), "--query", "9.9.9"], capsys)
    assert code == 1 and "9.9.9" in err


def test_run_replay_matches_golden(golden_dir, tmp_path, capsys):
    for name in ("classification", "traceability"):
        log = tmp_path / f"{name}.jsonl"
        code, out, _ = run(["run", "--plan", str(golden_dir / f"plan_{name}.json"), "--backend", "replay",
                            "--fixtures", str(golden_dir / "fixtures"), "--log", str(log)], capsys)
        assert code == 0 and "(0 failed)" in out
        assert log.read_bytes() == (golden_dir / f"results_{name}.jsonl").read_bytes()


def test_run_refuses_existing_log(golden_dir, tmp_path, capsys):
    log = tmp_path / "r.jsonl"
    log.write_text("{}\n")
    code, _, err = run(["run", "--plan", str(golden_dir / "plan_classification.json"),
                        "--backend", "oracle:perfect", "--log", str(log)], capsys)
    assert code == 1 and "resume" in err


def test_replay_without_fixtures_dir(golden_dir, tmp_path, capsys):
    code, _, _ = run(["run", "--plan", str(golden_dir / "plan_classification.json"), "--backend", "replay",
                      "--out", str(tmp_path)], capsys)
    assert code == 1


def test_replay_missing_fixture_recorded_as_failure(golden_dir, tmp_path, capsys):
    empty = tmp_path / "fx"
    empty.mkdir()
    code, out, _ = run(["run", "--plan", str(golden_dir / "plan_classification.json"), "--backend", "replay",
                        "--fixtures", str(empty), "--out", str(tmp_path)], capsys)
    assert code == 0 and "(30 failed)" in out


def test_oracle_run_resume_score_report_audit(golden_dir, tmp_path, capsys):
    plan = str(golden_dir / "plan_classification.json")
    log = tmp_path / "results.jsonl"
    code, out, _ = run(["run", "--plan", plan, "--backend", "oracle:perfect", "--out", str(tmp_path)], capsys)
    assert code == 0 and "30 runs executed" in out
    code, out, _ = run(["resume", "--plan", plan, "--backend", "oracle:perfect", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("0 runs executed")
    code, out, _ = run(["score", "--log", str(log)], capsys)
    assert code == 0 and "100.0% / 100.0% / 100.0%" in out
    code, out, _ = run(["score", "--log", str(log), "--format", "json"], capsys)
    assert json.loads(out)["tasks"]["BinaryClassification"]["Persona"]["runs"] == 6
    code, out, _ = run(["report", "--log", str(log), "--out", str(tmp_path / "rep"), "--format", "csv"], capsys)
    assert code == 0 and not (tmp_path / "rep" / "report.md").exists()
    assert (tmp_path / "rep" / "metrics_BinaryClassification.csv").is_file()
    code, out, _ = run(["audit", "--plan", plan, "--log", str(log)], capsys)
    assert code == 0 and "OK" in out


def test_audit_detects_tampering(golden_dir, tmp_path, capsys):
    lines = (golden_dir / "results_classification.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["confusion"]["tp"] += 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    code, out, _ = run(["audit", "--plan", str(golden_dir / "plan_classification.json"), "--log", str(bad)], capsys)
    assert code == 2 and "1 inconsistencies" in out


def test_report_golden(golden_dir, tmp_path, capsys):
    code, _, _ = run(["report", "--log", str(golden_dir / "results_classification.jsonl"),
                      str(golden_dir / "results_traceability.jsonl"), "--out", str(tmp_path)], capsys)
    assert code == 0
    for f in (golden_dir / "report").iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_report_missing_log(tmp_path, capsys):
    code, _, err = run(["report", "--log", str(tmp_path / "none.jsonl")], capsys)
    assert code == 2 and "not found" in err


def test_parse_classification(capsys, monkeypatch):
    code, out, _ = run(["parse-classification", "--ids", "1,2,3", "--pattern", "Template"], capsys,
                       "(ID=2)", monkeypatch)
    assert code == 0 and json.loads(out)["labels"] == {"1": "F", "2": "NF", "3": "F"}


def test_parse_trace(data_dir, capsys, monkeypatch):
    code, out, _ = run(["parse-trace", "--query", "3.2.1", "--srs", str(data_dir / "themas.txt")], capsys,
                       "ID list: 3.2.2; 3.2.1; 9.9", monkeypatch)
    assert code == 0 and json.loads(out) == {"linked_ids": ["3.2.2"]}


def test_parse_trace_needs_universe(capsys, monkeypatch):
    assert run(["parse-trace", "--query", "1.1"], capsys, "", monkeypatch)[0] == 1
