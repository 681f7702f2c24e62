"""Command-line front end: ``esn <subcommand> ...``.

Exit codes: 0 when nothing was found, 1 when a violation (or any shown
fact) was found, 2 on errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .datamodel import FactBase
from .engine import run_query
from .errors import EsnError
from .events import SHIPPED, load_rulesets, shadow_params
from .ingest import asp_ify, dumps_log, ingest, read_log
from .parser import Program, format_program, parse_program, parse_query, parse_term
from .privacy import ExportPolicy, RegionMap, export_view, shipped_policy, verify_no_leak
from .qat import (
    RulePatch, format_report, get_spec, load_query_library, load_spec, run_corpus, run_logs,
    what_if,
)
from .scenarios import SCENARIOS, VARIANTS, generate_scenario

EXIT_PASS, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


def _emit(data: dict, text: str, fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "json":
        out.write(json.dumps(data, indent=2, sort_keys=False) + "\n")
    elif text:
        out.write(text.rstrip("\n") + "\n")


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _load_inputs(paths: list) -> Program:
    """Merge ``.esn`` programs and ingested ``.jsonl`` logs into one program."""
    progs = []
    for path in paths:
        if path.endswith(".jsonl"):
            fb, _ = ingest(read_log(path)) if Path(path).is_file() else (None, None)
            if fb is None:
                raise CliError(f"no such file: {path}")
            progs.append(Program(tuple(fb)))
        else:
            progs.append(parse_program(_read(path)))
    return Program().merge(*progs) if progs else Program()


def _load_facts(paths: list) -> FactBase:
    prog = _load_inputs(paths)
    if prog.rules:
        raise CliError("fact inputs must not contain rules")
    return FactBase(prog.facts)


def _rulesets(spec: Optional[str]) -> Program:
    names = [n.strip() for n in (spec or "").split(",") if n.strip()]
    return load_rulesets(names) if names else Program()


def _spec(name: str):
    if name.endswith(".esn"):
        if not Path(name).is_file():
            raise CliError(f"no such file: {name}")
        return load_spec(name)
    try:
        return get_spec(name)
    except KeyError:
        known = ", ".join(s.query_id for s in load_query_library())
        raise CliError(f"unknown query {name!r}; library: {known}") from None


# -- subcommands -----------------------------------------------------------

def cmd_gen(args) -> int:
    log = generate_scenario(args.scenario, args.variant, args.seed)
    text = dumps_log(log)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def cmd_ingest(args) -> int:
    log = read_log(args.log) if Path(args.log).is_file() else None
    if log is None:
        raise CliError(f"no such file: {args.log}")
    if args.no_derive:
        fb, report = asp_ify(log)
    else:
        fb, report = ingest(log)
    dump = format_program(Program(tuple(fb.sorted())))
    if args.out:
        Path(args.out).write_text(dump, encoding="utf-8")
    else:
        sys.stdout.write(dump)
    data = {"command": "ingest", "facts": len(fb), **report.to_dict()}
    text = "\n".join([f"facts: {len(fb)}"] +
                     [f"  {k}: {v}" for k, v in data["facts_emitted"].items()] +
                     [f"  derived {k}: {v}" for k, v in data["derived"].items()] +
                     [f"  dropped: {d}" for d in data["records_dropped"]])
    _emit(data, text, args.format, sys.stderr)
    return EXIT_PASS


def _query(args, explain: bool) -> int:
    if len(args.inputs) < 1:
        raise CliError("expected at least a query file")
    *inputs, query_path = args.inputs
    query = parse_query(_read(query_path))
    program = _rulesets(args.rulesets).merge(_load_inputs(inputs))
    program = shadow_params(program, query.facts)
    shown, result = run_query(program, query)
    if getattr(args, "fact", None):
        target = parse_term(args.fact)
        shown = [f for f in shown if f == target] or [target]
    trees = [result.explain(f) for f in shown] if explain else []
    data = {"command": "explain" if explain else "query",
            "facts": [str(f) for f in shown]}
    lines = [str(f) for f in shown]
    if explain:
        data["proofs"] = [t.to_dict() for t in trees]
        lines = [t.render() for t in trees]
    _emit(data, "\n".join(lines), args.format)
    return EXIT_VIOLATION if shown else EXIT_PASS


def cmd_query(args) -> int:
    return _query(args, args.explain)


def cmd_explain(args) -> int:
    return _query(args, True)


def cmd_test(args) -> int:
    specs = load_query_library()
    if args.queries:
        specs = [_spec(q.strip()) for q in args.queries.split(",") if q.strip()]
    if args.corpus:
        lo, _, hi = args.seeds.partition("-")
        seeds = range(int(lo), int(hi or lo) + 1)
        scenarios = args.scenarios.split(",") if args.scenarios else sorted(SCENARIOS)
        corpus = [(s, v, seed) for s in scenarios for v in VARIANTS for seed in seeds]
        report = run_corpus(specs, corpus, labeled_only=args.labeled, timing=args.timing)
    else:
        if not args.logs:
            raise CliError("give log files or --corpus")
        logs = []
        for path in args.logs:
            if not Path(path).is_file():
                raise CliError(f"no such file: {path}")
            log = read_log(path)
            meta = log.meta
            logs.append((log, (meta.get("scenario_id", Path(path).stem),
                               meta.get("variant", "-"), meta.get("seed", "-"))))
        report = run_logs(specs, logs, labeled_only=args.labeled, timing=args.timing)
    _emit({"command": "test", **report}, format_report(report), args.format)
    outcomes = report["summary"]["outcomes"]
    if outcomes["error"]:
        return EXIT_ERROR
    return EXIT_VIOLATION if outcomes["violated"] else EXIT_PASS


def cmd_whatif(args) -> int:
    spec = _spec(args.query)
    patch = RulePatch.from_json(_read(args.patch))
    fb = _load_facts(args.facts)
    baseline, patched = what_if(spec, fb, patch)
    data = {"command": "whatif", "baseline": baseline.to_dict(), "patched": patched.to_dict()}
    text = f"baseline: {baseline.render()}\npatched:  {patched.render()}"
    _emit(data, text, args.format)
    if "error" in (baseline.outcome, patched.outcome):
        return EXIT_ERROR
    return EXIT_VIOLATION if patched.outcome == "violated" else EXIT_PASS


def cmd_export(args) -> int:
    if args.policy in (None, "downtown"):
        policy, regions = shipped_policy("downtown")
    else:
        policy = ExportPolicy.parse(_read(args.policy))
        regions = RegionMap()
    if args.regions:
        regions = RegionMap.loads(_read(args.regions))
    fb = _load_facts(args.facts)
    exported = export_view(fb, policy, regions)
    report = verify_no_leak(exported, policy)
    dump = format_program(Program(tuple(exported.sorted())))
    if args.out:
        Path(args.out).write_text(dump, encoding="utf-8")
    else:
        sys.stdout.write(dump)
    data = {"command": "export", "facts": len(exported), **report.to_dict()}
    text = f"exported {len(exported)} facts, leaks: {len(report.findings)}"
    _emit(data, text, args.format, sys.stderr)
    return EXIT_PASS if report.ok else EXIT_ERROR


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esn", description="ESN scenario logic toolkit")
    p.add_argument("--version", action="version", version=f"esn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp):
        sp.add_argument("--format", choices=("text", "json"), default="text")

    g = sub.add_parser("gen", help="generate a synthetic scenario log")
    g.add_argument("scenario", choices=sorted(SCENARIOS))
    g.add_argument("--variant", choices=VARIANTS, default="compliant")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", help="output .jsonl (default: stdout)")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("ingest", help="compile a JSONL log to ESN facts")
    i.add_argument("log")
    i.add_argument("--out", help="output .esn (default: stdout)")
    i.add_argument("--no-derive", action="store_true", help="skip acceleration/jerk/TTC")
    fmt(i)
    i.set_defaults(func=cmd_ingest)

    for name, func, helptext in (("query", cmd_query, "evaluate a query; last input is the query"),
                                 ("explain", cmd_explain, "print proof trees for shown facts")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("inputs", nargs="+", help="fact/rule files (.esn, .jsonl) then the query .esn")
        q.add_argument("--rulesets", help=f"comma-separated: {', '.join(SHIPPED)} or .esn paths")
        if name == "query":
            q.add_argument("--explain", action="store_true")
        else:
            q.add_argument("--fact", help="explain only this fact")
        fmt(q)
        q.set_defaults(func=func)

    t = sub.add_parser("test", help="run library queries over logs or a generated corpus")
    t.add_argument("logs", nargs="*")
    t.add_argument("--queries", help="comma-separated query ids or .esn paths")
    t.add_argument("--corpus", action="store_true", help="generate the scenario corpus")
    t.add_argument("--scenarios", help="comma-separated scenario ids (with --corpus)")
    t.add_argument("--seeds", default="1-5", help="seed range like 1-50 (with --corpus)")
    t.add_argument("--labeled", action="store_true", help="only run queries each log is labelled for")
    t.add_argument("--timing", action="store_true", help="include wall-clock timing")
    fmt(t)
    t.set_defaults(func=cmd_test)

    w = sub.add_parser("whatif", help="compare a query before and after a rule patch")
    w.add_argument("facts", nargs="+")
    w.add_argument("--query", required=True, help="query id or .esn path")
    w.add_argument("--patch", required=True, help="JSON patch file (empty file = no change)")
    fmt(w)
    w.set_defaults(func=cmd_whatif)

    e = sub.add_parser("export", help="privacy-preserving export of facts")
    e.add_argument("facts", nargs="+")
    e.add_argument("--policy", help="policy .esn (default: shipped downtown policy)")
    e.add_argument("--regions", help="region map .jsonl")
    e.add_argument("--out", help="output .esn (default: stdout)")
    fmt(e)
    e.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "test" and args.corpus and args.logs:
        parser.error("--corpus cannot be combined with log files")
    if args.command == "test" and not args.corpus and (args.scenarios or args.seeds != "1-5"):
        parser.error("--scenarios/--seeds need --corpus")
    try:
        return args.func(args)
    except (CliError, EsnError, OSError, ValueError) as exc:
        print(f"esn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
