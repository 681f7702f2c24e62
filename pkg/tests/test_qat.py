import json
import random
from fractions import Fraction

import pytest

from esn.datamodel import FactBase, atom
from esn.errors import PatchError
from esn.ingest import ingest
from esn.parser import Program, format_program
from esn.qat import (
    RulePatch, Verdict, apply_patch, format_report, get_spec, load_query_library, load_spec,
    missing_requirements, run_corpus, run_logs, run_test, what_if,
)
from esn.events import standard_library
from esn.scenarios import generate_scenario

from oracles import min_ttc, overspeed_steps, random_trace

WINDOW_15 = """
ego_braked_in_window(Ego, T_start) :-
    Deadline = T_start + 15,
    occurs(brake_pedal_pressed(Ego), T_brake),
    T_brake > T_start,
    T_brake <= Deadline.
"""


def boundary_base(offset=8):
    return FactBase([
        atom("holds", atom("position", "ego", 10, 0, 0), 100),
        atom("holds", atom("position", "lead", 35, 0, 0), 100),
        atom("holds", atom("velocity", "ego", 12, 0, 0), 100),
        atom("holds", atom("velocity", "lead", 2, 0, 0), 100),
        atom("occurs", atom("brake_light_on", "lead"), 100),
        atom("holds", atom("ttc_deci", "ego", "lead", 25), 100),
        atom("occurs", atom("brake_pedal_pressed", "ego"), 100 + offset),
    ])


def test_library_contents():
    ids = [s.query_id for s in load_query_library()]
    assert ids == ["Q-01", "Q-02", "Q-03", "Q-04", "Q-05", "Q-06", "Q-08", "Q-F3"]
    assert get_spec("Q-05").requires == ["abs_status"]
    assert get_spec("Q-F3").expected == {"compliant": "pass", "violating": "violated"}


def test_low_ttc_violates_headway_query():
    fb = FactBase([atom("object_property", "ego", "role", "ego"),
                   atom("holds", atom("ttc_deci", "ego", "car_9", 12), 40)])
    verdict = run_test(get_spec("Q-04"), fb)
    assert verdict.outcome == "violated"
    assert [str(f) for f, _ in verdict.violations] == ["violation(ego, 40)"]
    assert "12 < 15" in verdict.violations[0][1].checks


def test_empty_base_passes():
    for spec in load_query_library():
        assert run_test(spec, FactBase()).outcome == "pass"


def test_missing_stream_is_an_error_cell():
    log = generate_scenario("SC-13", "violating", 4)
    report = run_logs([get_spec("Q-05")], [(log, ("SC-13", "violating", 4))])
    (cell,) = report["cells"]
    assert cell["outcome"] == "error"
    assert cell["diagnostics"] == "missing required facts: abs_status"
    assert missing_requirements(get_spec("Q-05"), FactBase()) == ["abs_status"]


def test_error_verdict_on_arithmetic_failure(tmp_path):
    (tmp_path / "bad.esn").write_text(
        "violation(V, T) :- holds(velocity(V, X, Y, Z), T), R = X / Y, R > 1.\n#show violation/2.\n")
    fb = FactBase([atom("holds", atom("velocity", "ego", 1, 0, 0), 0)])
    verdict = run_test(load_spec(tmp_path / "bad.esn"), fb)
    assert verdict.outcome == "error" and "division by zero" in verdict.diagnostics
    assert verdict.query_id == "bad"


def test_boundary_case_flips_under_wider_window():
    fb = boundary_base(8)
    snapshot = format_program(Program(tuple(fb.sorted())))
    patch = RulePatch.from_json(json.dumps({"remove": ["ego_braked_in_window/2#0"], "add": WINDOW_15}))
    baseline, patched = what_if(get_spec("Q-F3"), fb, patch)
    assert baseline.outcome == "violated" and patched.outcome == "pass"
    assert format_program(Program(tuple(fb.sorted()))) == snapshot


def test_rebind_flips_headway_query():
    fb = FactBase([atom("object_property", "ego", "role", "ego"),
                   atom("holds", atom("ttc_deci", "ego", "car_9", 12), 40)])
    baseline, patched = what_if(get_spec("Q-04"), fb, RulePatch(rebind={"min_ttc_deci": 10}))
    assert (baseline.outcome, patched.outcome) == ("violated", "pass")


def test_empty_patch_gives_identical_verdicts():
    fb = boundary_base(8)
    baseline, patched = what_if(get_spec("Q-F3"), fb, RulePatch.from_json(""))
    assert baseline == patched
    assert baseline.to_dict() == patched.to_dict()


def test_cyclic_patch_is_rejected():
    patch = RulePatch.from_json('{"add": "is_following(A, B, T) :- distance(A, B, T, D), not is_following(B, A, T)."}')
    with pytest.raises(PatchError):
        what_if(get_spec("Q-F3"), boundary_base(), patch)


def test_unknown_rule_id_in_patch():
    with pytest.raises(PatchError, match="unknown rule id"):
        apply_patch(standard_library(), RulePatch(remove=("nope/1#0",)))
    with pytest.raises(PatchError):
        RulePatch.from_json('{"delete": []}')


def test_corpus_report_is_sorted_and_reproducible():
    cells = [("SC-13", "violating", 7), ("SC-12", "compliant", 3), ("SC-13", "compliant", 7)]
    a = run_corpus(load_query_library(), cells, labeled_only=True)
    b = run_corpus(load_query_library(), list(reversed(cells)), labeled_only=True)
    assert a == b
    assert a["summary"]["agreement"] == 1.0 and a["summary"]["labeled"] == 3
    assert "timing" not in a
    text = format_report(a)
    assert text.splitlines()[-1] == "cells 3, labeled 3, agreement 100.0%"


def test_timing_only_on_request():
    report = run_corpus([get_spec("Q-F3")], [("SC-13", "violating", 1)], timing=True)
    assert set(report["timing"]) == {"Q-F3"}


def test_verdict_render_shows_proof():
    verdict = run_test(get_spec("Q-F3"), boundary_base(9), scenario_id="hand")
    assert verdict.render().startswith("Q-F3 on hand: violated")
    assert "25 < 30" in verdict.render()
    assert isinstance(verdict, Verdict) and verdict.stats["facts_derived"] > 0


# -- encodings against imperative scans ----------------------------------

def violation_times(verdict):
    return sorted(f.args[1].scaled // 1000 for f, _ in verdict.violations)


@pytest.mark.parametrize("seed", range(100))
def test_speed_and_headway_encodings_match_scans(seed):
    rng = random.Random(seed)
    log = random_trace(rng)
    fb, _ = ingest(log)
    ego = [r for r in log.trajectory if r["object_id"] == "ego"]
    speeds = [(int(r["t"] * 10), Fraction(r["vx"]), Fraction(r["vy"])) for r in ego]
    assert violation_times(run_test(get_spec("Q-02"), fb)) == \
        overspeed_steps(speeds, Fraction("13.411"))

    want = []
    for r in ego:
        t = r["t"]
        ahead = [o for o in log.trajectory if o["t"] == t and o["object_id"] != "ego" and o["x"] > r["x"]]
        best = min_ttc([(t, Fraction(o["x"] - r["x"]), Fraction(r["vx"] - o["vx"])) for o in ahead])
        if best is not None and best < 15:
            want.append(int(t * 10))
    assert violation_times(run_test(get_spec("Q-04"), fb)) == want
