"""Reader and printer for the ESN text language.

Statements end with ``.``; ``:-`` separates head and body; body literals are
separated by ``,``; ``not`` negates an atom; lowercase identifiers are symbols
and functors, identifiers starting with an uppercase letter or ``_`` are
variables; ``%`` starts a line comment.  Directives ``#show f/n.``,
``#allow f/n.`` and ``#deny f/n.`` declare shown and export predicates.
See ``docs/language.md`` for the full grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .datamodel import (
    Compound,
    Signature,
    Symbol,
    Term,
    Text,
    Variable,
    is_ground,
    variables,
)
from .errors import (
    EsnSyntaxError,
    MixedPredicateError,
    NonTerminatingRiskError,
    QueryError,
    SafetyError,
)
from .numeric import Numeric

# -- AST -----------------------------------------------------------------

COMPARISON_OPS = ("<", "<=", ">", ">=", "=", "!=")


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Sqrt:
    operand: "Expr"


Expr = Union[BinOp, Neg, Sqrt, Term]


@dataclass(frozen=True)
class Positive:
    atom: Compound


@dataclass(frozen=True)
class Negative:
    atom: Compound


@dataclass(frozen=True)
class Comparison:
    lhs: Expr
    op: str
    rhs: Expr


@dataclass(frozen=True)
class Assignment:
    var: str
    expr: Expr


Literal = Union[Positive, Negative, Comparison, Assignment]


@dataclass(frozen=True)
class Rule:
    head: Compound
    body: tuple = ()

    def __str__(self) -> str:
        return format_rule(self)


@dataclass(frozen=True)
class Program:
    facts: tuple = ()
    rules: tuple = ()
    shows: tuple = ()
    allows: tuple = ()
    denies: tuple = ()

    def rule_ids(self) -> list[str]:
        """Stable identifiers ``name/arity#k`` (k counts rules of that head in order)."""
        seen: dict[Signature, int] = {}
        ids = []
        for r in self.rules:
            sig = r.head.signature
            k = seen.get(sig, 0)
            seen[sig] = k + 1
            ids.append(f"{sig[0]}/{sig[1]}#{k}")
        return ids

    def head_signatures(self) -> set[Signature]:
        return {r.head.signature for r in self.rules}

    def fact_signatures(self) -> set[Signature]:
        return {f.signature for f in self.facts}

    def merge(self, *others: "Program") -> "Program":
        progs = (self,) + others
        return Program(
            facts=tuple(f for p in progs for f in p.facts),
            rules=tuple(r for p in progs for r in p.rules),
            shows=tuple(dict.fromkeys(s for p in progs for s in p.shows)),
            allows=tuple(dict.fromkeys(s for p in progs for s in p.allows)),
            denies=tuple(dict.fromkeys(s for p in progs for s in p.denies)),
        )

    def __str__(self) -> str:
        return format_program(self)


# -- lexer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>%[^\n]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<badstring>")
  | (?P<directive>\#[a-z]+)
  | (?P<ident>[a-z][A-Za-z0-9_]*)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<punct>:-|<=|>=|!=|[<>=(),.+\-*/^])
    """,
    re.VERBOSE,
)

_DIRECTIVES = ("#show", "#allow", "#deny")
_RESERVED = ("not", "sqrt")


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if not m:
            raise EsnSyntaxError(f"unexpected character {source[pos]!r}", line, col, "a token")
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "badstring":
            raise EsnSyntaxError("unterminated string", line, col, 'closing "')
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"n": "\n", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


# -- parser --------------------------------------------------------------

class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.anon = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message: str, expected: str = "", tok: Optional[Token] = None):
        t = tok or self.tok
        found = t.text or "end of input"
        raise EsnSyntaxError(f"{message}, found {found!r}", t.line, t.col, expected)

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind not in ("punct",):
            self.error("unexpected token", repr(text))
        return self.advance()

    def is_punct(self, *texts: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text in texts

    # statements

    def program(self) -> tuple[Program, list[tuple[Rule, Token]]]:
        facts, rules, shows, allows, denies = [], [], [], [], []
        rule_tokens = []
        while self.tok.kind != "eof":
            if self.tok.kind == "directive":
                start = self.tok
                name = self.advance().text
                if name not in _DIRECTIVES:
                    self.error("unknown directive", "#show, #allow or #deny", start)
                sig = self.signature()
                self.expect(".")
                {"#show": shows, "#allow": allows, "#deny": denies}[name].append(sig)
                continue
            if self.is_punct(":-"):
                self.error("integrity constraints are not supported", "a rule head")
            start = self.tok
            self.anon = 0
            head = self.atom()
            if self.is_punct("."):
                self.advance()
                facts.append((head, start))
                continue
            if not self.is_punct(":-"):
                self.error("unexpected token", "'.' or ':-'")
            self.advance()
            body = self.body()
            self.expect(".")
            rule = Rule(head, tuple(body))
            rules.append(rule)
            rule_tokens.append((rule, start))
        for f, start in facts:
            if not is_ground(f):
                raise SafetyError(f"{f}.", variables(f)[0], "variable in fact")
        prog = Program(
            tuple(f for f, _ in facts), tuple(rules), tuple(shows), tuple(allows), tuple(denies)
        )
        return prog, rule_tokens

    def signature(self) -> Signature:
        if self.tok.kind != "ident":
            self.error("expected predicate name", "identifier")
        name = self.advance().text
        self.expect("/")
        if self.tok.kind != "number" or "." in self.tok.text:
            self.error("expected arity", "integer")
        return (name, int(self.advance().text))

    def body(self) -> list:
        lits = []
        bound: set[str] = set()
        while True:
            lit = self.literal(bound)
            lits.append(lit)
            if isinstance(lit, Positive):
                bound.update(variables(lit.atom))
            elif isinstance(lit, Assignment):
                bound.add(lit.var)
            if self.is_punct(","):
                self.advance()
                continue
            return lits

    def literal(self, bound: set[str]):
        if self.tok.kind == "ident" and self.tok.text == "not":
            self.advance()
            return Negative(self.atom())
        start = self.tok
        lhs = self.expr()
        if self.is_punct(*COMPARISON_OPS):
            op = self.advance().text
            rhs = self.expr()
            if op == "=" and isinstance(lhs, Variable) and lhs.name not in bound:
                return Assignment(lhs.name, rhs)
            return Comparison(lhs, op, rhs)
        if isinstance(lhs, Symbol):
            return Positive(Compound(lhs.name, ()))
        if isinstance(lhs, Compound):
            return Positive(lhs)
        self.error("expected an atom or comparison", "atom", start)

    def atom(self) -> Compound:
        if self.tok.kind != "ident" or self.tok.text in _RESERVED:
            self.error("expected an atom", "predicate name")
        name = self.advance().text
        if self.is_punct("("):
            return Compound(name, self.args())
        return Compound(name, ())

    def args(self) -> list:
        self.expect("(")
        out = [self.term()]
        while self.is_punct(","):
            self.advance()
            out.append(self.term())
        self.expect(")")
        return out

    def term(self) -> Term:
        t = self.tok
        if t.kind == "number":
            return self.number()
        if t.kind == "punct" and t.text == "-" and self.peek().kind == "number":
            self.advance()
            n = self.number()
            return -n
        if t.kind == "string":
            self.advance()
            return Text(_unescape(t.text[1:-1]))
        if t.kind == "var":
            return self.variable()
        if t.kind == "ident" and t.text not in _RESERVED:
            self.advance()
            if self.is_punct("("):
                return Compound(t.text, self.args())
            return Symbol(t.text)
        self.error("expected a term", "term")

    def number(self) -> Numeric:
        t = self.advance()
        try:
            return Numeric.parse(t.text)
        except ValueError as exc:
            raise EsnSyntaxError(str(exc), t.line, t.col, "at most 3 fractional digits") from None
        except ArithmeticError:
            raise EsnSyntaxError("number out of range", t.line, t.col, "a 64-bit fixed-point value") from None

    def variable(self) -> Variable:
        t = self.advance()
        if t.text == "_":
            self.anon += 1
            return Variable(f"_{self.anon}")
        return Variable(t.text)

    # expressions

    def expr(self):
        left = self.mult()
        while self.is_punct("+", "-"):
            op = self.advance().text
            left = BinOp(op, left, self.mult())
        return left

    def mult(self):
        left = self.unary()
        while self.is_punct("*", "/"):
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.is_punct("-"):
            nxt, after = self.peek(), self.peek(2)
            if nxt.kind == "number" and not (after.kind == "punct" and after.text == "^"):
                self.advance()
                return -self.number()
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.is_punct("^"):
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self):
        t = self.tok
        if t.kind == "ident" and t.text == "sqrt":
            self.advance()
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            return Sqrt(inner)
        if self.is_punct("("):
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if t.kind == "number":
            return self.number()
        return self.term()


# -- analysis ------------------------------------------------------------

def expr_variables(e) -> list[str]:
    if isinstance(e, BinOp):
        return _uniq(expr_variables(e.left) + expr_variables(e.right))
    if isinstance(e, (Neg, Sqrt)):
        return expr_variables(e.operand)
    return variables(e)


def literal_variables(lit) -> list[str]:
    if isinstance(lit, (Positive, Negative)):
        return variables(lit.atom)
    if isinstance(lit, Comparison):
        return _uniq(expr_variables(lit.lhs) + expr_variables(lit.rhs))
    return _uniq([lit.var] + expr_variables(lit.expr))


def _uniq(names: list[str]) -> list[str]:
    return list(dict.fromkeys(names))


def bound_variables(rule: Rule, initially: Iterable[str] = ()) -> set[str]:
    """Variables the body can bind: positive literals, then assignments whose inputs are bound."""
    bound = set(initially)
    for lit in rule.body:
        if isinstance(lit, Positive):
            bound.update(variables(lit.atom))
    pending = [lit for lit in rule.body if isinstance(lit, Assignment)]
    changed = True
    while changed:
        changed = False
        for lit in list(pending):
            if set(expr_variables(lit.expr)) <= bound:
                bound.add(lit.var)
                pending.remove(lit)
                changed = True
    return bound


def needed_variables(rule: Rule) -> list[str]:
    names = variables(rule.head)
    for lit in rule.body:
        if isinstance(lit, Negative):
            names += variables(lit.atom)
        elif isinstance(lit, Comparison):
            names += literal_variables(lit)
        elif isinstance(lit, Assignment):
            names += expr_variables(lit.expr)
    return _uniq(names)


def unsafe_variables(rule: Rule, initially: Iterable[str] = ()) -> list[str]:
    bound = bound_variables(rule, initially)
    return [v for v in needed_variables(rule) if v not in bound]


def demand_positions(rules: Iterable[Rule]) -> dict[Signature, tuple[int, ...]]:
    """Head argument positions that some rule leaves for its callers to bind.

    A rule may omit a body binding for a variable that is a direct head
    argument; such a predicate is evaluated on demand, for exactly the
    argument values its call sites supply.  Any other unsafe variable is a
    :class:`SafetyError`.
    """
    positions: dict[Signature, set[int]] = {}
    for rule in rules:
        unsafe = unsafe_variables(rule)
        if not unsafe:
            continue
        direct = {
            a.name: k for k, a in enumerate(rule.head.args) if isinstance(a, Variable)
        }
        demanded = [v for v in unsafe if v in direct]
        for v in list(demanded):
            others = [d for d in demanded if d != v]
            if v in bound_variables(rule, others):
                demanded.remove(v)
        leftover = unsafe_variables(rule, demanded)
        if leftover or not demanded:
            raise SafetyError(format_rule(rule), (leftover or unsafe)[0])
        for v in demanded:
            positions.setdefault(rule.head.signature, set()).add(direct[v])
    return {sig: tuple(sorted(ps)) for sig, ps in positions.items()}


def call_sites(rules: Iterable[Rule], sig: Signature):
    """Yield (rule, literal index) for each body literal calling ``sig``."""
    for rule in rules:
        for k, lit in enumerate(rule.body):
            if isinstance(lit, (Positive, Negative)) and lit.atom.signature == sig:
                yield rule, k


def check_demand(rules: list[Rule], demands: dict[Signature, tuple[int, ...]]) -> None:
    """Every call of an on-demand predicate must bind its demanded arguments."""
    for sig, ps in demands.items():
        sites = list(call_sites(rules, sig))
        offender = next(r for r in rules if r.head.signature == sig and unsafe_variables(r))
        if not sites:
            raise SafetyError(format_rule(offender), unsafe_variables(offender)[0])
        for caller, k in sites:
            own = _direct_demand_vars(caller, demands)
            rest = Rule(caller.head, caller.body[:k] + caller.body[k + 1:])
            bound = bound_variables(rest, own)
            lit = caller.body[k]
            for p in ps:
                missing = [v for v in variables(lit.atom.args[p]) if v not in bound]
                if missing:
                    raise SafetyError(format_rule(offender), unsafe_variables(offender)[0],
                                      f"call {lit.atom} does not bind")


def _direct_demand_vars(rule: Rule, demands) -> set[str]:
    ps = demands.get(rule.head.signature, ())
    return {rule.head.args[p].name for p in ps if isinstance(rule.head.args[p], Variable)}


def dependency_edges(rules: Iterable[Rule]) -> list[tuple[Signature, Signature, bool]]:
    """(head, body predicate, negative?) for each body atom."""
    edges = []
    for rule in rules:
        for lit in rule.body:
            if isinstance(lit, Positive):
                edges.append((rule.head.signature, lit.atom.signature, False))
            elif isinstance(lit, Negative):
                edges.append((rule.head.signature, lit.atom.signature, True))
    return edges


def strongly_connected(nodes: Iterable, edges: Iterable[tuple]) -> dict:
    """Map each node to a component id (Tarjan, iterative, deterministic)."""
    adj: dict = {}
    for n in nodes:
        adj.setdefault(n, [])
    for a, b, *_ in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, [])
    index, low, comp = {}, {}, {}
    stack, on_stack = [], set()
    counter = [0]
    for root in adj:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            node, i = work.pop()
            if i == 0:
                index[node] = low[node] = counter[0]
                counter[0] += 1
                stack.append(node)
                on_stack.add(node)
            succs = adj[node]
            if i < len(succs):
                work.append((node, i + 1))
                nxt = succs[i]
                if nxt not in index:
                    work.append((nxt, 0))
                elif nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
                continue
            if low[node] == index[node]:
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp[w] = node
                    if w == node:
                        break
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    return comp


def check_program(prog: Program) -> None:
    """Load-time checks: mixed predicates, safety, and recursion through assignments."""
    heads = prog.head_signatures()
    for f in prog.facts:
        if f.signature in heads:
            raise MixedPredicateError(f.signature)
    demands = demand_positions(prog.rules)
    check_demand(list(prog.rules), demands)
    check_recursive_assignments(prog.rules)


def check_recursive_assignments(rules: Iterable[Rule]) -> None:
    rules = list(rules)
    edges = dependency_edges(rules)
    comp = strongly_connected({r.head.signature for r in rules}, edges)
    for rule in rules:
        if not any(isinstance(lit, Assignment) for lit in rule.body):
            continue
        h = comp[rule.head.signature]
        for lit in rule.body:
            if isinstance(lit, Positive) and comp.get(lit.atom.signature) == h:
                raise NonTerminatingRiskError(format_rule(rule))


def parse_program(source: str, check: bool = True) -> Program:
    prog, _ = _Parser(source).program()
    if check:
        check_program(prog)
    return prog


def parse_query(source: str) -> Program:
    prog = parse_program(source)
    if not prog.shows:
        raise QueryError("query declares no shown predicate")
    return prog


def parse_term(source: str) -> Term:
    """Parse a single term such as ``violation(ego, 12)`` (no trailing period)."""
    p = _Parser(source)
    t = p.term()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input", "end of term")
    return t


def parse_fact(source: str) -> Compound:
    source = source.strip()
    if source.endswith("."):
        source = source[:-1]
    p = _Parser(source)
    a = p.atom()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input", "end of atom")
    return a


# -- printer -------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(e, context: int = 0) -> str:
    """Print ``e``; ``context`` is the binding strength required by the parent."""
    if isinstance(e, BinOp):
        if e.op == "^":
            s = f"{_format_power_base(e.left)} ^ {format_expr(e.right, 3)}"
            return f"({s})" if context > 4 else s
        p = _PREC[e.op]
        s = f"{format_expr(e.left, p)} {e.op} {format_expr(e.right, p + 1)}"
        return f"({s})" if context > p else s
    if isinstance(e, Neg):
        inner = e.operand
        if isinstance(inner, Numeric):
            s = f"-({inner})"
        else:
            s = f"-{format_expr(inner, 3)}"
        return f"({s})" if context > 3 else s
    if isinstance(e, Sqrt):
        return f"sqrt({format_expr(e.operand)})"
    if isinstance(e, Numeric) and e.scaled < 0 and context > 3:
        return f"({e})"
    return str(e)


def _format_power_base(e) -> str:
    if isinstance(e, (BinOp, Neg)) or (isinstance(e, Numeric) and e.scaled < 0):
        return f"({format_expr(e)})"
    return format_expr(e, 5)


def format_literal(lit) -> str:
    if isinstance(lit, Positive):
        return str(lit.atom)
    if isinstance(lit, Negative):
        return f"not {lit.atom}"
    if isinstance(lit, Comparison):
        return f"{format_expr(lit.lhs)} {lit.op} {format_expr(lit.rhs)}"
    return f"{lit.var} = {format_expr(lit.expr)}"


def format_rule(rule: Rule) -> str:
    body = ",\n    ".join(format_literal(lit) for lit in rule.body)
    return f"{rule.head} :-\n    {body}."


def format_program(prog: Program) -> str:
    parts = []
    for name, sigs in (("#allow", prog.allows), ("#deny", prog.denies)):
        parts.extend(f"{name} {f}/{n}." for f, n in sigs)
    parts.extend(f"{f}." for f in prog.facts)
    parts.extend(format_rule(r) for r in prog.rules)
    parts.extend(f"#show {f}/{n}." for f, n in prog.shows)
    return "".join(p + "\n" for p in parts)
