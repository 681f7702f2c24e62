"""Standard rule library: geometry, kinematic events and cross-domain fusion.

Rule sets ship as ``.esn`` sources under ``esn/stdlib`` and are parsed on
demand.  Thresholds are ``param(Name, Value)`` facts inside each source; use
:func:`with_params` to override them rather than adding a second fact.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

from .datamodel import Compound, Symbol
from .errors import RedefinitionError, UnknownRuleset
from .numeric import Numeric
from .parser import Program, parse_program

SHIPPED = ("geometry", "kinematic_events", "fusion")


@lru_cache(maxsize=None)
def _shipped(name: str) -> Program:
    source = resources.files("esn.stdlib").joinpath(f"{name}.esn").read_text(encoding="utf-8")
    return parse_program(source)


def ruleset_source(name: str) -> str:
    if name not in SHIPPED:
        raise UnknownRuleset(f"unknown ruleset {name!r}; shipped: {', '.join(SHIPPED)}")
    return resources.files("esn.stdlib").joinpath(f"{name}.esn").read_text(encoding="utf-8")


def load_ruleset(name: Union[str, Path]) -> Program:
    """Load a shipped rule set by name, or a user rule set from an ``.esn`` path."""
    if isinstance(name, str) and name in SHIPPED:
        return _shipped(name)
    path = Path(name)
    if path.suffix == ".esn" and path.is_file():
        return parse_program(path.read_text(encoding="utf-8"))
    raise UnknownRuleset(f"unknown ruleset {str(name)!r}; shipped: {', '.join(SHIPPED)}")


def combine(programs: Iterable[Program]) -> Program:
    """Merge rule sets, refusing any head predicate defined in two of them.

    ``param/2`` facts may appear in several sets as long as names differ.
    """
    programs = list(programs)
    owner: dict = {}
    params: dict = {}
    for i, prog in enumerate(programs):
        for sig in prog.head_signatures():
            if sig in owner and owner[sig] != i:
                raise RedefinitionError(f"predicate {sig[0]}/{sig[1]} defined by two rule sets")
            owner[sig] = i
        for name in _param_names(prog):
            if name in params and params[name] != i:
                raise RedefinitionError(f"parameter {name} declared by two rule sets")
            params[name] = i
    if not programs:
        return Program()
    return programs[0].merge(*programs[1:])


def load_rulesets(names: Iterable[Union[str, Path]]) -> Program:
    return combine(load_ruleset(n) for n in names)


def standard_library() -> Program:
    return load_rulesets(SHIPPED)


# -- parameters ----------------------------------------------------------

def _param_names(prog: Program) -> list[str]:
    return [str(f.args[0]) for f in prog.facts if _is_param(f)]


def _is_param(f: Compound) -> bool:
    return f.functor == "param" and len(f.args) == 2


def params(prog: Program) -> dict[str, Numeric]:
    return {str(f.args[0]): f.args[1] for f in prog.facts if _is_param(f)}


def with_params(prog: Program, overrides: Mapping[str, object]) -> Program:
    """Replace (or add) ``param(Name, Value)`` facts."""
    if not overrides:
        return prog
    values = {k: Numeric.of(v) for k, v in overrides.items()}
    facts = [f for f in prog.facts if not (_is_param(f) and str(f.args[0]) in values)]
    facts += [Compound("param", (Symbol(k), v)) for k, v in values.items()]
    return Program(tuple(facts), prog.rules, prog.shows, prog.allows, prog.denies)


def shadow_params(prog: Program, base: Iterable[Compound]) -> Program:
    """Drop the program's ``param`` facts whose names also appear in ``base``."""
    names = {str(f.args[0]) for f in base if _is_param(f)}
    if not names:
        return prog
    facts = [f for f in prog.facts if not (_is_param(f) and str(f.args[0]) in names)]
    return Program(tuple(facts), prog.rules, prog.shows, prog.allows, prog.denies)
