import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from esn.cli import main
from esn.parser import parse_program

ROOT = Path(__file__).parent.parent
FIXTURES = Path(__file__).parent / "fixtures"
SCHEMA = json.loads((ROOT / "docs" / "report.schema.json").read_text())
QF3 = ROOT / "src" / "esn" / "queries" / "qf3.esn"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def valid(doc):
    jsonschema.validate(doc, SCHEMA)
    return doc


@pytest.fixture
def sc13(tmp_path, capsys):
    paths = {}
    for variant in ("compliant", "violating"):
        paths[variant] = tmp_path / f"{variant}.jsonl"
        assert run(capsys, "gen", "SC-13", "--variant", variant, "--seed", 7, "--out", paths[variant])[0] == 0
    return paths


def test_ingest_writes_reparseable_facts(sc13, tmp_path, capsys):
    out = tmp_path / "facts.esn"
    code, _, err = run(capsys, "ingest", sc13["violating"], "--out", out, "--format", "json")
    report = valid(json.loads(err))
    prog = parse_program(out.read_text())
    assert code == 0 and len(prog.facts) == report["facts"] == report["total"]
    assert report["total"] == sum(report["facts_emitted"].values()) + sum(report["derived"].values())


def test_ingest_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "ingest", tmp_path / "nope.jsonl")
    assert code == 2 and "nope.jsonl" in err


def test_ingest_meta_only(tmp_path, capsys):
    log = tmp_path / "empty.jsonl"
    log.write_text('{"type": "meta", "scenario_id": "empty"}\n')
    code, out, _ = run(capsys, "ingest", log)
    assert code == 0 and out == ""


def test_ingest_schema_error_exit_code(tmp_path, capsys):
    log = tmp_path / "bad.jsonl"
    log.write_text('{"type": "meta"}\n{"type": "trajectory", "t": 0}\n')
    code, _, err = run(capsys, "ingest", log)
    assert code == 2 and "line 2" in err


def test_query_following_listing(tmp_path, capsys):
    query = tmp_path / "q.esn"
    query.write_text("#show is_following/3.\n")
    code, out, _ = run(capsys, "query", FIXTURES / "following_pair.esn", query)
    assert code == 1
    assert out.strip() == "is_following(car_01, car_02, 1622541987.1)"


def test_query_braking_on_scenarios(sc13, capsys):
    code, out, _ = run(capsys, "query", sc13["compliant"], QF3, "--rulesets", "geometry")
    assert code == 0 and out == ""
    code, out, _ = run(capsys, "query", sc13["violating"], QF3, "--rulesets", "geometry",
                       "--explain", "--format", "json")
    doc = valid(json.loads(out))
    assert code == 1 and doc["facts"] and doc["proofs"][0]["rule"] == "violation/2#0"


def test_explain_prints_checks(sc13, capsys):
    code, out, _ = run(capsys, "explain", sc13["violating"], QF3, "--rulesets", "geometry")
    assert code == 1 and "not ego_braked_in_window" in out


def test_unstratifiable_query(tmp_path, capsys):
    query = tmp_path / "loop.esn"
    query.write_text("p :- not q.\nq :- not p.\n#show p/0.\n")
    code, _, err = run(capsys, "query", query)
    assert code == 2 and "p/0" in err and "q/0" in err


def test_gen_then_test_reports_labeled_violations(tmp_path, capsys):
    log = tmp_path / "sc12.jsonl"
    run(capsys, "gen", "SC-12", "--variant", "violating", "--seed", 3, "--out", log)
    code, out, _ = run(capsys, "test", log, "--queries", "Q-F3,Q-04", "--format", "json")
    doc = valid(json.loads(out))
    by_query = {c["query_id"]: c for c in doc["cells"]}
    assert code == 1
    assert by_query["Q-04"]["outcome"] == "violated" == by_query["Q-04"]["expected"]
    assert by_query["Q-F3"]["expected"] is None


def test_corpus_run(capsys):
    code, out, _ = run(capsys, "test", "--corpus", "--scenarios", "SC-13", "--seeds", "1-2", "--labeled")
    assert code == 1
    assert out.strip().splitlines()[-1] == "cells 4, labeled 4, agreement 100.0%"


def test_corpus_error_cells_exit_2(capsys):
    code, out, _ = run(capsys, "test", "--corpus", "--scenarios", "SC-13", "--seeds", "1",
                       "--queries", "Q-05", "--format", "json")
    doc = valid(json.loads(out))
    assert code == 2 and doc["summary"]["outcomes"]["error"] == 2


def test_conflicting_flags_rejected(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["test", str(tmp_path / "a.jsonl"), "--corpus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["test", "x.jsonl", "--seeds", "1-3"])


def test_whatif_empty_patch(sc13, tmp_path, capsys):
    patch = tmp_path / "empty.json"
    patch.write_text("")
    code, out, _ = run(capsys, "whatif", sc13["violating"], "--query", "Q-F3", "--patch", patch,
                       "--format", "json")
    doc = valid(json.loads(out))
    assert code == 1 and doc["baseline"] == doc["patched"]


def test_whatif_widened_window(sc13, tmp_path, capsys):
    patch = tmp_path / "wide.json"
    patch.write_text(json.dumps({
        "remove": ["ego_braked_in_window/2#0"],
        "add": "ego_braked_in_window(E, T) :- occurs(brake_pedal_pressed(E), B), B > T, B <= T + 100.",
    }))
    code, out, _ = run(capsys, "whatif", sc13["violating"], "--query", "Q-F3", "--patch", patch)
    assert out.startswith("baseline: Q-F3 on <facts>: violated")
    assert "patched:  Q-F3 on <facts>:" in out
    assert code in (0, 1)


def test_whatif_bad_patch(sc13, tmp_path, capsys):
    patch = tmp_path / "bad.json"
    patch.write_text('{"remove": ["no_such/1#0"]}')
    code, _, err = run(capsys, "whatif", sc13["violating"], "--query", "Q-F3", "--patch", patch)
    assert code == 2 and "unknown rule id" in err


def test_export_downtown(tmp_path, capsys):
    log = tmp_path / "sc01.jsonl"
    run(capsys, "gen", "SC-01", "--seed", 2, "--out", log)
    out = tmp_path / "shared.esn"
    code, _, err = run(capsys, "export", log, "--out", out, "--format", "json")
    doc = valid(json.loads(err))
    text = out.read_text()
    assert code == 0 and doc["ok"] and doc["findings"] == []
    assert "position(" not in text and "in_region(" in text


def test_outputs_are_deterministic(sc13, capsys):
    first = run(capsys, "query", sc13["violating"], QF3, "--rulesets", "geometry", "--explain")
    second = run(capsys, "query", sc13["violating"], QF3, "--rulesets", "geometry", "--explain")
    assert first == second


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "esn", "gen", "SC-04", "--seed", "5"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith('{"type": "meta"')
