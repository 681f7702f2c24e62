"""Query-as-Test: safety oracles as violation queries over scenario facts.

A test passes when its query derives no ``violation`` fact; every violation
comes with the proof tree that justifies it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

from .datamodel import Compound, FactBase, fact_signature
from .engine import ProofTree, relevant_rules, run_query, stratify
from .errors import EsnError, PatchError
from .events import shadow_params, standard_library, with_params
from .ingest import ingest
from .parser import Program, Rule, check_program, parse_program, parse_query
from .scenarios import SCENARIOS, generate_scenario

OUTCOMES = ("pass", "violated", "error")
QUERY_FILES = ("q01", "q02", "q03", "q04", "q05", "q06", "q08", "qf3")


@dataclass
class TestSpec:
    __test__ = False  # not a pytest class

    query_id: str
    title: str
    query: Program
    target_scenarios: list = field(default_factory=list)
    expected: dict = field(default_factory=dict)
    requires: list = field(default_factory=list)
    source: str = ""

    @classmethod
    def from_source(cls, source: str, meta: dict) -> "TestSpec":
        targets = list(meta.get("targets", []))
        expected = {}
        if any(SCENARIOS.get(t) == meta["query_id"] for t in targets):
            expected = {"compliant": "pass", "violating": "violated"}
        return cls(meta["query_id"], meta.get("title", ""), parse_query(source),
                   targets, expected, list(meta.get("requires", [])), source)


@dataclass
class Verdict:
    query_id: str
    scenario_id: str
    outcome: str
    violations: list = field(default_factory=list)   # (fact, ProofTree)
    stats: dict = field(default_factory=dict)
    diagnostics: str = ""
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self, proofs: bool = True) -> dict:
        out = {
            "query_id": self.query_id,
            "scenario_id": self.scenario_id,
            "outcome": self.outcome,
            "violations": [str(f) for f, _ in self.violations],
            "stats": dict(self.stats),
        }
        if proofs:
            out["proofs"] = [tree.to_dict() for _, tree in self.violations]
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out

    def render(self) -> str:
        head = f"{self.query_id} on {self.scenario_id or '<facts>'}: {self.outcome}"
        if self.diagnostics:
            head += f" ({self.diagnostics})"
        return "\n".join([head] + [tree.render(1) for _, tree in self.violations])


@dataclass
class RulePatch:
    remove: tuple = ()
    add: tuple = ()
    rebind: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not (self.remove or self.add or self.rebind)

    @classmethod
    def from_json(cls, text: str) -> "RulePatch":
        """``{"remove": [ids], "add": "<esn rules>", "rebind": {name: number}}``; blank is empty."""
        if not text.strip():
            return cls()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PatchError(f"patch is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise PatchError("patch must be a JSON object")
        unknown = set(data) - {"remove", "add", "rebind"}
        if unknown:
            raise PatchError(f"unknown patch keys: {', '.join(sorted(unknown))}")
        add = data.get("add", "")
        if isinstance(add, list):
            add = "\n".join(add)
        try:
            rules = parse_program(add, check=False).rules if add else ()
        except EsnError as exc:
            raise PatchError(f"cannot parse added rules: {exc}") from None
        return cls(tuple(data.get("remove", [])), tuple(rules), dict(data.get("rebind", {})))


# -- library -------------------------------------------------------------

def load_query_library() -> list[TestSpec]:
    specs = []
    pkg = resources.files("esn.queries")
    for name in QUERY_FILES:
        meta = json.loads(pkg.joinpath(f"{name}.json").read_text(encoding="utf-8"))
        specs.append(TestSpec.from_source(pkg.joinpath(f"{name}.esn").read_text(encoding="utf-8"), meta))
    return specs


def load_spec(path: Union[str, Path]) -> TestSpec:
    """Load a user test: ``name.esn`` with an optional ``name.json`` sidecar."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    meta.setdefault("query_id", path.stem)
    return TestSpec.from_source(path.read_text(encoding="utf-8"), meta)


def get_spec(query_id: str, specs: Optional[list] = None) -> TestSpec:
    for s in specs if specs is not None else load_query_library():
        if s.query_id == query_id:
            return s
    raise KeyError(query_id)


# -- running -------------------------------------------------------------

def _evaluate(query_id: str, scenario_id: str, program: Program, query: Program,
              fb: FactBase) -> Verdict:
    start = time.perf_counter()
    try:
        program = shadow_params(program, fb)
        query = shadow_params(query, fb)
        shown, result = run_query(relevant_rules(program, query), query, fb)
        violations = [(f, result.explain(f)) for f in shown]
    except EsnError as exc:
        return Verdict(query_id, scenario_id, "error",
                       diagnostics=f"{type(exc).__name__}: {exc}",
                       seconds=time.perf_counter() - start)
    return Verdict(query_id, scenario_id, "violated" if violations else "pass", violations,
                   result.stats.to_dict(), seconds=time.perf_counter() - start)


def run_test(spec: TestSpec, fb: FactBase, library: Optional[Program] = None,
             scenario_id: str = "") -> Verdict:
    library = standard_library() if library is None else library
    return _evaluate(spec.query_id, scenario_id, library, spec.query, fb)


def apply_patch(program: Program, patch: RulePatch) -> Program:
    ids = program.rule_ids()
    missing = [r for r in patch.remove if r not in ids]
    if missing:
        raise PatchError(f"unknown rule id(s): {', '.join(missing)}")
    drop = set(patch.remove)
    rules = tuple(r for r, i in zip(program.rules, ids) if i not in drop) + tuple(patch.add)
    patched = Program(program.facts, rules, program.shows, program.allows, program.denies)
    try:
        patched = with_params(patched, patch.rebind)
        check_program(patched)
        stratify(patched)
    except EsnError as exc:
        raise PatchError(f"patched program rejected: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise PatchError(f"bad rebind value: {exc}") from None
    return patched


def what_if(spec: TestSpec, fb: FactBase, patch: RulePatch,
            library: Optional[Program] = None, scenario_id: str = "") -> tuple[Verdict, Verdict]:
    """Run ``spec`` before and after patching the combined library and query rules.

    Rule ids (``name/arity#k``) refer to the library and the query together.
    """
    library = standard_library() if library is None else library
    baseline = _evaluate(spec.query_id, scenario_id, library, spec.query, fb)
    combined = library.merge(Program(spec.query.facts, spec.query.rules))
    patched_prog = apply_patch(combined, patch)
    shows = Program(shows=spec.query.shows)
    patched = _evaluate(spec.query_id, scenario_id, patched_prog, shows, fb)
    return baseline, patched


def missing_requirements(spec: TestSpec, fb: FactBase) -> list[str]:
    if not spec.requires:
        return []
    present = {fact_signature(f)[0] for f in fb}
    return [r for r in spec.requires if r not in present]


def run_corpus(specs: Iterable[TestSpec], corpus: Iterable[tuple], labeled_only: bool = False,
               timing: bool = False) -> dict:
    """Run every spec on every generated ``(scenario_id, variant, seed)`` log.

    With ``labeled_only`` a log is checked only against the queries its
    generator labelled.  Wall-clock timing is reported only when asked for,
    so that the default report is byte-for-byte reproducible.
    """
    logs = ((generate_scenario(*cell), cell) for cell in sorted(set(corpus)))
    return run_logs(specs, logs, labeled_only, timing)


def run_logs(specs: Iterable[TestSpec], logs: Iterable[tuple], labeled_only: bool = False,
             timing: bool = False) -> dict:
    """Like :func:`run_corpus` for ``(ScenarioLog, (scenario_id, variant, seed))`` pairs."""
    specs = list(specs)
    library = standard_library()
    cells = []
    seconds: dict = {}
    for log, (scenario_id, variant, seed) in logs:
        fb, _ = ingest(log)
        labels = log.meta.get("labels", {})
        for spec in specs:
            expected = labels.get(spec.query_id)
            if labeled_only and expected is None:
                continue
            lacking = missing_requirements(spec, fb)
            if lacking:
                verdict = Verdict(spec.query_id, scenario_id, "error",
                                  diagnostics=f"missing required facts: {', '.join(lacking)}")
            else:
                verdict = run_test(spec, fb, library, scenario_id)
            seconds.setdefault(spec.query_id, []).append(verdict.seconds)
            cell = {
                "query_id": spec.query_id, "scenario_id": scenario_id,
                "variant": variant, "seed": seed, "outcome": verdict.outcome,
                "violations": len(verdict.violations), "expected": expected,
            }
            if verdict.diagnostics:
                cell["diagnostics"] = verdict.diagnostics
            cells.append(cell)
    cells.sort(key=lambda c: (c["query_id"], c["scenario_id"], str(c["variant"]), str(c["seed"])))
    labeled = [c for c in cells if c["expected"] is not None]
    agree = sum(1 for c in labeled if c["outcome"] == c["expected"])
    report = {
        "cells": cells,
        "summary": {
            "cells": len(cells),
            "labeled": len(labeled),
            "agree": agree,
            "agreement": agree / len(labeled) if labeled else None,
            "outcomes": {o: sum(1 for c in cells if c["outcome"] == o) for o in OUTCOMES},
        },
    }
    if timing:
        report["timing"] = {
            q: {"cells": len(v), "total_seconds": sum(v), "mean_seconds": sum(v) / len(v)}
            for q, v in sorted(seconds.items())
        }
    return report


def format_report(report: dict) -> str:
    """Aligned text table of a corpus report."""
    header = ("query", "scenario", "variant", "seed", "outcome", "expected", "n")
    rows = [header] + [
        (c["query_id"], c["scenario_id"], str(c["variant"]), str(c["seed"]), c["outcome"],
         c["expected"] or "-", str(c["violations"]))
        for c in report["cells"]
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    s = report["summary"]
    rate = "n/a" if s["agreement"] is None else f"{100 * s['agreement']:.1f}%"
    lines.append(f"cells {s['cells']}, labeled {s['labeled']}, agreement {rate}")
    return "\n".join(lines)
