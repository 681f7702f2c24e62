import pytest

from esn.datamodel import FactBase, Text, atom
from esn.errors import LeakError, PolicyError, UnstratifiableError
from esn.ingest import ingest
from esn.numeric import Numeric
from esn.parser import Program, parse_program
from esn.privacy import (
    ExportPolicy, Region, RegionMap, export_view, refine, region_density, shipped_policy,
    verify_no_leak,
)
from esn.scenarios import generate_scenario

from oracles import random_privacy_triple, raw_density

P = Numeric.parse
DOWNTOWN = RegionMap([Region("downtown_la", P("0"), P("100"), P("0"), P("100"))])


def policy():
    return shipped_policy("downtown")[0]


def position(v, x, y, t):
    return atom("holds", atom("position", v, P(x), P(y), P("0.5")), t)


def test_position_becomes_region():
    out = export_view(FactBase([position("car_01", "15.2", "45.8", 1)]), policy(), DOWNTOWN)
    assert atom("holds", atom("in_region", "car_01", Text("downtown_la")), 1) in out
    assert not any(f.args[0].functor == "position" for f in out if f.functor == "holds")


def test_outside_every_region():
    out = export_view(FactBase([position("car_01", "150", "45.8", 1)]), policy(), DOWNTOWN)
    assert len(out) == 0


def test_empty_export():
    assert len(export_view(FactBase(), policy(), DOWNTOWN)) == 0
    assert verify_no_leak(FactBase(), policy()).findings == []


def test_verify_finds_position():
    fact = position("car_01", "1", "2", 3)
    report = verify_no_leak(FactBase([fact, atom("object_property", "car_01", "class", "car")]), policy())
    assert report.findings == [fact] and not report.ok
    assert report.counts == {"object_property/3": 1}


def test_region_boundaries_are_inclusive():
    box = DOWNTOWN.regions[0]
    assert box.contains(P("0"), P("100")) and not box.contains(P("100.001"), P("5"))
    out = export_view(FactBase([position("a", "100", "0", 1)]), policy(), DOWNTOWN)
    assert len(out) == 1


def test_policy_invariants():
    with pytest.raises(PolicyError):
        ExportPolicy.parse("#allow position/4.\n#deny position/4.")
    with pytest.raises(PolicyError):
        ExportPolicy.parse("#allow in_region/2.\nsecret(V) :- holds(position(V, X, Y, Z), T).")


def test_nested_sensitive_term_raises_leak_error():
    bad = ExportPolicy.parse(
        "#allow wrapped/1.\n#deny position/4.\n"
        "wrapped(position(V, X, Y, Z)) :- holds(position(V, X, Y, Z), T).")
    with pytest.raises(LeakError):
        export_view(FactBase([position("a", "1", "1", 1)]), bad, RegionMap())


def test_region_map_round_trip():
    _, regions = shipped_policy("downtown")
    assert RegionMap.loads(regions.dumps()) == regions
    with pytest.raises(PolicyError):
        RegionMap.loads('{"name": "x"}\n')


def test_refine_recovers_depot_position():
    exported = FactBase([atom("holds", atom("in_region", "van_7", Text("depot_zone")), 4)])
    supplement = FactBase([atom("depot", Text("depot_zone"), 120, 40)])
    rules = parse_program(
        "approx_position(V, X, Y, T) :- holds(in_region(V, R), T), depot(R, X, Y).")
    out = refine(exported, rules, supplement)
    assert atom("approx_position", "van_7", 120, 40, 4) in out


def test_refine_without_rules_is_identity():
    exported = FactBase([atom("holds", atom("in_region", "a", Text("r")), 1)])
    supplement = FactBase([atom("depot", Text("r"), 1, 2)])
    assert set(refine(exported, Program(), supplement)) == set(exported) | set(supplement)


def test_refine_unstratifiable():
    with pytest.raises(UnstratifiableError):
        refine(FactBase(), parse_program("p :- not q.\nq :- not p."))


def test_downtown_policy_on_left_turn_scenario():
    fb, _ = ingest(generate_scenario("SC-01", "violating", 3))
    pol, regions = shipped_policy("downtown")
    out = export_view(fb, pol, regions)
    assert {f.args[0].functor if f.functor == "holds" else f.functor for f in out} == \
        {"in_region", "object_property"}
    assert verify_no_leak(out, pol).ok


def test_adding_raw_facts_never_removes_exports():
    base = FactBase([position("a", "10", "10", 1)])
    before = set(export_view(base, policy(), DOWNTOWN))
    base.insert(position("b", "20", "20", 1))
    assert before <= set(export_view(base, policy(), DOWNTOWN))


@pytest.mark.parametrize("seed", range(20))
def test_random_exports_leak_nothing_and_keep_density(seed):
    cell, regions_src, policy_src = random_privacy_triple(seed)
    fb, _ = ingest(generate_scenario(*cell))
    pol, regions = ExportPolicy.parse(policy_src), RegionMap.loads(regions_src)
    out = export_view(fb, pol, regions)
    assert verify_no_leak(out, pol).ok
    assert region_density(out) == {(Text(n), t): c for (n, t), c in raw_density(fb, regions.regions).items()}
