"""Privacy-preserving export through logical abstraction.

An export policy names the predicates that may leave the owner (``#allow``)
and those that never may (``#deny``), plus abstraction rules that derive
coarse facts such as ``holds(in_region(V, "downtown"), T)`` from precise
ones.  Predicates are identified by :func:`~esn.datamodel.fact_signature`,
so ``position/4`` means the fluent inside ``holds(position(...), T)``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Union

from .datamodel import Compound, FactBase, Text, fact_signature
from .engine import evaluate
from .errors import LeakError, PolicyError
from .numeric import Numeric
from .parser import Program, parse_program


def _head_signature(head: Compound):
    return fact_signature(head)


@dataclass(frozen=True)
class ExportPolicy:
    allowed: frozenset
    sensitive: frozenset
    abstraction_rules: Program = field(default_factory=Program)

    def __post_init__(self):
        both = self.allowed & self.sensitive
        if both:
            names = ", ".join(f"{f}/{n}" for f, n in sorted(both))
            raise PolicyError(f"predicates both allowed and denied: {names}")
        for rule in self.abstraction_rules.rules:
            sig = _head_signature(rule.head)
            if sig not in self.allowed:
                raise PolicyError(f"abstraction rule derives {sig[0]}/{sig[1]}, which is not allowed")

    @classmethod
    def from_program(cls, prog: Program) -> "ExportPolicy":
        return cls(frozenset(tuple(s) for s in prog.allows),
                   frozenset(tuple(s) for s in prog.denies),
                   Program(prog.facts, prog.rules))

    @classmethod
    def parse(cls, source: str) -> "ExportPolicy":
        return cls.from_program(parse_program(source))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExportPolicy":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Region:
    name: str
    x_min: Numeric
    x_max: Numeric
    y_min: Numeric
    y_max: Numeric

    def contains(self, x: Numeric, y: Numeric) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def to_fact(self) -> Compound:
        return Compound("region_box", (Text(self.name), self.x_min, self.x_max, self.y_min, self.y_max))


@dataclass
class RegionMap:
    regions: list = field(default_factory=list)

    @classmethod
    def loads(cls, text: str) -> "RegionMap":
        regions = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line, parse_float=str)
                regions.append(Region(
                    str(rec["name"]),
                    *(Numeric.of(rec[k]) for k in ("x_min", "x_max", "y_min", "y_max"))))
            except (KeyError, ValueError, TypeError) as exc:
                raise PolicyError(f"region map line {lineno}: {exc}") from None
        return cls(regions)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RegionMap":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        return "".join(
            json.dumps({"name": r.name, "x_min": float(r.x_min), "x_max": float(r.x_max),
                        "y_min": float(r.y_min), "y_max": float(r.y_max)}) + "\n"
            for r in self.regions)

    def facts(self) -> list:
        return [r.to_fact() for r in self.regions]


def shipped_policy(name: str = "downtown") -> tuple[ExportPolicy, RegionMap]:
    pkg = resources.files("esn.policies")
    policy = ExportPolicy.parse(pkg.joinpath(f"{name}.esn").read_text(encoding="utf-8"))
    regions = RegionMap.loads(pkg.joinpath(f"{name}_regions.jsonl").read_text(encoding="utf-8"))
    return policy, regions


# -- export ----------------------------------------------------------------

def _sensitive_parts(f: Compound, sensitive: frozenset) -> bool:
    """True when ``f`` or any compound nested in it has a sensitive signature."""
    if fact_signature(f) in sensitive:
        return True
    stack = list(f.args)
    while stack:
        t = stack.pop()
        if isinstance(t, Compound):
            if t.signature in sensitive:
                return True
            stack.extend(t.args)
    return False


def abstract(fb: Iterable[Compound], policy: ExportPolicy, regions: RegionMap) -> FactBase:
    """All facts after running the abstraction rules, before any filtering."""
    prog = policy.abstraction_rules.merge(Program(tuple(regions.facts())))
    return evaluate(prog, fb).derived


def export_view(fb: Iterable[Compound], policy: ExportPolicy, regions: RegionMap) -> FactBase:
    full = abstract(fb, policy, regions)
    out = FactBase(f for f in full.sorted() if fact_signature(f) in policy.allowed)
    # independent second pass: a filter bug or a rule that nests sensitive data must not leak
    for f in out:
        if _sensitive_parts(f, policy.sensitive):
            raise LeakError(f)
    return out


@dataclass
class LeakReport:
    findings: list
    counts: dict

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [str(f) for f in self.findings], "counts": dict(self.counts)}


def verify_no_leak(exported: Iterable[Compound], policy: ExportPolicy) -> LeakReport:
    findings = []
    counts: Counter = Counter()
    for f in exported:
        sig = fact_signature(f)
        if _sensitive_parts(f, policy.sensitive):
            findings.append(f)
        elif sig in policy.allowed:
            counts[f"{sig[0]}/{sig[1]}"] += 1
    return LeakReport(findings, dict(sorted(counts.items())))


def refine(exported: Iterable[Compound], refinement_rules: Program,
           supplement: Iterable[Compound] = ()) -> FactBase:
    base = FactBase(exported)
    base.update(supplement)
    return evaluate(refinement_rules, base).derived


def region_density(facts: Iterable[Compound]) -> dict:
    """Distinct vehicles per ``(region, T)`` from ``holds(in_region(V, R), T)`` facts."""
    members: dict = {}
    for f in facts:
        if f.functor == "holds" and isinstance(f.args[0], Compound) and f.args[0].signature == ("in_region", 2):
            v, region = f.args[0].args
            members.setdefault((region, f.args[1]), set()).add(v)
    return {k: len(v) for k, v in members.items()}
