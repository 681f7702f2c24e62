"""ESN: timestamped logic facts, a stratified rule engine and query-as-test tooling."""

from .datamodel import Compound, FactBase, Symbol, Text, Variable, atom, num, sym
from .engine import EvalResult, ProofTree, evaluate, explain, replay, solve, stratify
from .errors import EsnError
from .events import load_ruleset, standard_library
from .ingest import ScenarioLog, asp_ify, derive_kinematics, ingest, read_log
from .numeric import Numeric
from .parser import Program, Rule, format_program, parse_program, parse_query
from .privacy import ExportPolicy, RegionMap, export_view, refine, verify_no_leak
from .qat import RulePatch, TestSpec, Verdict, load_query_library, run_corpus, run_test, what_if
from .scenarios import generate_scenario

__version__ = "0.1.0"

__all__ = [
    "Compound", "FactBase", "Symbol", "Text", "Variable", "atom", "num", "sym",
    "EvalResult", "ProofTree", "evaluate", "explain", "replay", "solve", "stratify",
    "EsnError", "load_ruleset", "standard_library",
    "ScenarioLog", "asp_ify", "derive_kinematics", "ingest", "read_log",
    "Numeric", "Program", "Rule", "format_program", "parse_program", "parse_query",
    "ExportPolicy", "RegionMap", "export_view", "refine", "verify_no_leak",
    "RulePatch", "TestSpec", "Verdict", "load_query_library", "run_corpus", "run_test", "what_if",
    "generate_scenario",
]
