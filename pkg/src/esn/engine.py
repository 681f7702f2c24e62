"""Bottom-up evaluation of stratified ESN programs.

Programs are stratified by negation and each stratum is computed to its
least fixpoint by semi-naive iteration.  Every derived fact keeps the first
derivation found under a deterministic iteration order, from which
:func:`explain` rebuilds a proof tree.

Rules whose head variables are not bound by the body (such as a window
check parameterised by its caller's timestamp) are evaluated on demand: a
hidden ``$demand`` predicate collects the argument values each call site
supplies, and the rule is restricted to those values.
"""

from __future__ import annotations

import operator
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .datamodel import (
    Compound,
    FactBase,
    Signature,
    Substitution,
    Symbol,
    Term,
    Text,
    Variable,
    apply,
    bucket_keys,
    sort_key,
    variables,
)
from .errors import (
    ConflictError,
    EsnArithmeticError,
    MixedPredicateError,
    NotDerivedError,
    UnstratifiableError,
)
from .numeric import INT64_MAX, INT64_MIN, SCALE, Numeric, _round_half_away
from .parser import (
    Assignment,
    BinOp,
    Comparison,
    Neg,
    Negative,
    Positive,
    Program,
    Rule,
    Sqrt,
    bound_variables,
    check_demand,
    check_recursive_assignments,
    demand_positions,
    dependency_edges,
    expr_variables,
    format_expr,
    format_rule,
    literal_variables,
    strongly_connected,
    unsafe_variables,
)

DEMAND_PREFIX = "$demand:"


# -- stratification ------------------------------------------------------

@dataclass
class Stratification:
    strata: list  # list[list[Signature]], each sorted
    edges: list  # (head, body predicate, negative?) between intensional predicates

    def stratum_of(self, sig: Signature) -> int:
        for k, members in enumerate(self.strata):
            if sig in members:
                return k
        raise KeyError(sig)


def stratify(program: Program) -> Stratification:
    return _stratify(program.rules)


def _stratify(rules: Iterable[Rule]) -> Stratification:
    rules = list(rules)
    intensional = list(dict.fromkeys(r.head.signature for r in rules))
    idb = set(intensional)
    edges = [e for e in dependency_edges(rules) if e[1] in idb]
    edges = list(dict.fromkeys(edges))
    comp = strongly_connected(intensional, edges)
    for head, body, negative in edges:
        if negative and comp[head] == comp[body]:
            members = sorted((s for s in intensional if comp[s] == comp[head]),
                             key=lambda s: (s[0].startswith("$"), s))
            raise UnstratifiableError([_display_sig(s) for s in members])

    succ: dict = {}
    for head, body, negative in edges:
        succ.setdefault(comp[head], []).append((comp[body], negative))
    level: dict = {}

    def level_of(c):
        # iterative post-order over the condensation (acyclic once negative cycles are excluded)
        stack = [(c, False)]
        while stack:
            node, done = stack.pop()
            if node in level:
                continue
            deps = [(d, n) for d, n in succ.get(node, ()) if d != node]
            if done:
                level[node] = max((level[d] + int(n) for d, n in deps), default=0)
                continue
            stack.append((node, True))
            for d, _ in deps:
                if d not in level:
                    stack.append((d, False))
        return level[c]

    by_level: dict[int, list] = {}
    for sig in intensional:
        by_level.setdefault(level_of(comp[sig]), []).append(sig)
    strata = [sorted(by_level[k]) for k in sorted(by_level)]
    return Stratification(strata, edges)


def _display_sig(sig: Signature) -> Signature:
    if sig[0].startswith(DEMAND_PREFIX):
        return (sig[0][len(DEMAND_PREFIX):].split("/")[0], sig[1])
    return sig


# -- expressions ---------------------------------------------------------

def eval_expr(e, sub: Substitution) -> Term:
    """Evaluate an arithmetic expression under ``sub``; arithmetic is fixed-point exact."""
    if isinstance(e, BinOp):
        a, b = eval_expr(e.left, sub), eval_expr(e.right, sub)
        return _arith(e.op, a, b)
    if isinstance(e, Neg):
        v = eval_expr(e.operand, sub)
        return -_numeric("-", v)
    if isinstance(e, Sqrt):
        return _numeric("sqrt", eval_expr(e.operand, sub)).sqrt()
    v = apply(sub, e)
    if isinstance(v, Variable) or (isinstance(v, Compound) and not v._ground):
        raise EsnArithmeticError("eval", (v,), reason="unbound variable")
    return v


_ARITH = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
    "^": operator.pow,
}


def _numeric(op: str, v) -> Numeric:
    if not isinstance(v, Numeric):
        raise EsnArithmeticError(op, (v,), reason="non-numeric operand")
    return v


def _arith(op: str, a, b) -> Numeric:
    if not isinstance(a, Numeric) or not isinstance(b, Numeric):
        raise EsnArithmeticError(op, (a, b), reason="non-numeric operand")
    return _ARITH[op](a, b)


def compare(op: str, a: Term, b: Term) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if isinstance(a, Numeric) and isinstance(b, Numeric):
        ka, kb = a.scaled, b.scaled
    else:
        ka, kb = sort_key(a), sort_key(b)
    if op == "<":
        return ka < kb
    if op == "<=":
        return ka <= kb
    if op == ">":
        return ka > kb
    return ka >= kb


def _compile_expr(e):
    """Closure evaluating ``e`` against an environment dict."""
    if isinstance(e, (BinOp, Neg, Sqrt)):
        fast, slow = _compile_scaled(e), _compile_terms(e)

        def run(env):
            try:
                return Numeric(fast(env))
            except _Irregular:
                return slow(env)  # recomputes and raises the precise error

        return run
    return _compile_terms(e)


def _compile_terms(e):
    """Reference evaluation over terms; raises the descriptive arithmetic errors."""
    if isinstance(e, BinOp):
        left, right, fn, op = _compile_terms(e.left), _compile_terms(e.right), _ARITH[e.op], e.op

        def binop(env):
            a, b = left(env), right(env)
            if a.__class__ is not Numeric or b.__class__ is not Numeric:
                raise EsnArithmeticError(op, (a, b), reason="non-numeric operand")
            return fn(a, b)

        return binop
    if isinstance(e, Neg):
        inner = _compile_terms(e.operand)
        return lambda env: -_numeric("-", inner(env))
    if isinstance(e, Sqrt):
        inner = _compile_terms(e.operand)
        return lambda env: _numeric("sqrt", inner(env)).sqrt()
    if isinstance(e, Variable):
        name = e.name
        return lambda env: env[name]
    if isinstance(e, Compound) and not e._ground:
        return lambda env: apply(env, e)
    return lambda env: e


class _Irregular(Exception):
    """Raised by the integer fast path whenever the reference path must decide."""


def _in_range(v: int) -> int:
    if v < INT64_MIN or v > INT64_MAX:
        raise _Irregular
    return v


def _compile_scaled(e):
    """Closure computing ``e`` on scaled integers, with the rounding of :class:`Numeric`."""
    if isinstance(e, BinOp):
        left, right, op = _compile_scaled(e.left), _compile_scaled(e.right), e.op
        if op == "+":
            return lambda env: _in_range(left(env) + right(env))
        if op == "-":
            return lambda env: _in_range(left(env) - right(env))
        if op == "*":
            return lambda env: _in_range(_round_half_away(left(env) * right(env), SCALE))
        if op == "/":
            def div(env):
                a, b = left(env), right(env)
                if b == 0:
                    raise _Irregular
                return _in_range(_round_half_away(a * SCALE, b))
            return div

        def power(env):
            a, b = left(env), right(env)
            if b < 0 or b % SCALE or b > 8 * SCALE:
                raise _Irregular
            n = b // SCALE
            if n == 0:
                return SCALE
            return _in_range(_round_half_away(a ** n, SCALE ** (n - 1)))
        return power
    if isinstance(e, Neg):
        inner = _compile_scaled(e.operand)
        return lambda env: _in_range(-inner(env))
    if isinstance(e, Sqrt):
        inner = _compile_scaled(e.operand)

        def root(env):
            a = inner(env)
            if a < 0:
                raise _Irregular
            return Numeric(a).sqrt().scaled
        return root
    if isinstance(e, Variable):
        name = e.name

        def leaf(env):
            v = env[name]
            if v.__class__ is Numeric:
                return v.scaled
            raise _Irregular
        return leaf
    if isinstance(e, Numeric):
        value = e.scaled
        return lambda env: value

    def irregular(env):
        raise _Irregular
    return irregular


# -- compiled plans ------------------------------------------------------

def _relation_key(a: Compound) -> tuple:
    if a.functor in ("holds", "occurs") and len(a.args) == 2 and isinstance(a.args[0], Compound):
        inner = a.args[0]
        return (a.functor, 2, inner.functor, len(inner.args))
    return (a.functor, len(a.args))


def _getter(path: tuple):
    if len(path) == 1:
        i = path[0]
        return lambda f: f.args[i]
    if len(path) == 2:
        i, j = path
        return lambda f: f.args[i].args[j]

    def get(f):
        for k in path:
            f = f.args[k]
        return f

    return get


class _Pattern:
    """A positive body atom compiled against the set of variables bound before it."""

    def __init__(self, a: Compound, bound: set):
        self.atom = a
        self.relkey = _relation_key(a)
        guaranteed = {()}
        if len(self.relkey) == 4:
            guaranteed.add((0,))
        self.shapes = []  # (getter, functor, arity) for nested compounds not implied by relkey
        key_paths, key_sources = [], []  # source: ("const", term) | ("var", name)
        self.binds = []  # (name, getter)
        self.eqs = []  # (getter, name) repeated variable inside the atom
        seen: dict[str, tuple] = {}

        def walk(t, path):
            if isinstance(t, Compound) and not (t._ground and path):
                if path not in guaranteed:
                    self.shapes.append((_getter(path), t.functor, len(t.args)))
                for k, arg in enumerate(t.args):
                    walk(arg, path + (k,))
            elif isinstance(t, Variable):
                if t.name in bound:
                    key_paths.append(path)
                    key_sources.append(("var", t.name))
                elif t.name in seen:
                    self.eqs.append((_getter(path), t.name))
                else:
                    seen[t.name] = path
                    self.binds.append((t.name, _getter(path)))
            else:
                key_paths.append(path)
                key_sources.append(("const", t))

        walk(a, ())
        self.key_paths = tuple(key_paths)
        self.key_getters = [_getter(p) for p in key_paths]
        self.key_sources = key_sources
        self.index_id = (self.relkey, self.key_paths, tuple((f, n) for _, f, n in self.shapes),
                         tuple(str(p) for p in key_paths))
        self.binds_names = [n for n, _ in self.binds]

    def shape_ok(self, f: Compound) -> bool:
        for get, functor, arity in self.shapes:
            try:
                sub = get(f)
            except (AttributeError, IndexError):
                return False
            if sub.__class__ is not Compound or sub.functor != functor or len(sub.args) != arity:
                return False
        return True

    def fact_key(self, f: Compound):
        return tuple(g(f) for g in self.key_getters)

    def probe_key(self, env: dict):
        return tuple(env[v] if kind == "var" else v for kind, v in self.key_sources)


class _Store:
    """All facts visible to the evaluation, with per-relation lazy hash indexes."""

    def __init__(self):
        self.facts: dict[Compound, None] = {}
        self.relations: dict[tuple, list] = {}
        self.indexes: dict[tuple, tuple] = {}  # index_id -> (pattern, dict)
        self.by_relation_index: dict[tuple, list] = {}

    def add(self, f: Compound) -> None:
        self.facts[f] = None
        for key in bucket_keys(f):
            self.relations.setdefault(key, []).append(f)
            for pat, idx in self.by_relation_index.get(key, ()):
                if pat.shape_ok(f):
                    idx.setdefault(pat.fact_key(f), []).append(f)

    def index(self, pat: _Pattern) -> dict:
        entry = self.indexes.get(pat.index_id)
        if entry is None:
            idx: dict = {}
            for f in self.relations.get(pat.relkey, ()):
                if pat.shape_ok(f):
                    idx.setdefault(pat.fact_key(f), []).append(f)
            entry = (pat, idx)
            self.indexes[pat.index_id] = entry
            self.by_relation_index.setdefault(pat.relkey, []).append(entry)
        return entry[1]


_STEP_JOIN, _STEP_NEG, _STEP_CMP, _STEP_ASSIGN, _STEP_SOLVE = range(5)
_CMP = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _compile_cmp(lit: Comparison):
    lhs, rhs, op = _compile_expr(lit.lhs), _compile_expr(lit.rhs), lit.op
    if op == "=":
        return lambda env: lhs(env) == rhs(env)
    if op == "!=":
        return lambda env: lhs(env) != rhs(env)
    fn = _CMP[op]

    def check(env):
        a, b = lhs(env), rhs(env)
        if a.__class__ is Numeric and b.__class__ is Numeric:
            return fn(a.scaled, b.scaled)
        return fn(sort_key(a), sort_key(b))

    return check


def _compile_instantiate(t):
    """Closure building the ground instance of ``t`` from an environment."""
    if isinstance(t, Variable):
        name = t.name
        return lambda env: env[name]
    if isinstance(t, Compound) and not t._ground:
        parts = [_compile_instantiate(a) for a in t.args]
        functor = t.functor
        return lambda env: Compound(functor, [p(env) for p in parts])
    return lambda env: t


def _solve_for_operand(lit: Assignment, bound: set):
    """``(name, expr)`` binding the one unbound operand of a bound ``V = A + B`` or ``V = A - B``.

    Fixed-point addition is exact, so ``T2 = T + S`` with T2 and S known gives
    ``T = T2 - S``; the original assignment is then checked as an equality.
    """
    e = lit.expr
    if lit.var not in bound or not isinstance(e, BinOp) or e.op not in ("+", "-"):
        return None
    free = [v for v in expr_variables(e) if v not in bound]
    if len(free) != 1:
        return None
    target, var = free[0], Variable(lit.var)
    if e.left == Variable(target):
        return target, BinOp("-" if e.op == "+" else "+", var, e.right)
    if e.right == Variable(target):
        return target, BinOp("-", var, e.left) if e.op == "+" else BinOp("-", e.left, var)
    return None


class _Plan:
    """Join order for one rule with an optional delta-driven literal placed first."""

    def __init__(self, rule: Rule, delta_index: Optional[int], initially: set = frozenset()):
        body = list(rule.body)
        order = []
        if delta_index is not None:
            order.append(delta_index)
        bound = set(initially)
        remaining = [k for k in range(len(body)) if k != delta_index]
        steps = []

        def schedule_builtins():
            progress = True
            while progress:
                progress = False
                for k in list(remaining):
                    lit = body[k]
                    if isinstance(lit, Positive):
                        continue
                    if isinstance(lit, Assignment):
                        ready = set(expr_variables(lit.expr)) <= bound
                        if not ready:
                            solved = _solve_for_operand(lit, bound)
                            if solved is not None:
                                name, expr = solved
                                steps.append((_STEP_SOLVE, name, _compile_expr(expr)))
                                bound.add(name)
                                progress = True
                                continue
                    else:
                        ready = set(literal_variables(lit)) <= bound
                    if ready:
                        steps.append(self._builtin(lit, bound))
                        if isinstance(lit, Assignment):
                            bound.add(lit.var)
                        remaining.remove(k)
                        progress = True

        self.delta_pattern = None
        if delta_index is not None:
            pat = _Pattern(body[delta_index].atom, bound)
            self.delta_pattern = pat
            steps.append((_STEP_JOIN, pat, True))
            bound.update(variables(body[delta_index].atom))
        schedule_builtins()
        while remaining:
            # most constrained atom first; body order breaks ties
            positives = [k for k in remaining if isinstance(body[k], Positive)]
            nxt = min(positives, key=lambda k: (len(set(variables(body[k].atom)) - bound), k),
                      default=None)
            if nxt is None:
                # only unsatisfiable builtins left: safety checks make this unreachable
                raise EsnArithmeticError("plan", (), format_rule(rule), "unbound variables")
            pat = _Pattern(body[nxt].atom, bound)
            steps.append((_STEP_JOIN, pat, False))
            bound.update(variables(body[nxt].atom))
            remaining.remove(nxt)
            schedule_builtins()
        self.steps = steps
        self.head = _compile_instantiate(rule.head)

    @staticmethod
    def _builtin(lit, bound):
        if isinstance(lit, Negative):
            return (_STEP_NEG, _compile_instantiate(lit.atom), None)
        if isinstance(lit, Comparison):
            return (_STEP_CMP, _compile_cmp(lit), None)
        fn = _compile_expr(lit.expr)
        return (_STEP_ASSIGN, lit.var, fn, lit.var in bound)


# -- evaluation results --------------------------------------------------

@dataclass
class ProofTree:
    root: Compound
    rule_id: str
    children: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    substitution: dict = field(default_factory=dict)

    def render(self, indent: int = 0) -> str:
        pad = "  " * indent
        lines = [f"{pad}{self.root}  [{self.rule_id}]"]
        for c in self.checks:
            lines.append(f"{pad}  ✓ {c}")
        for child in self.children:
            lines.append(child.render(indent + 1))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "fact": str(self.root),
            "rule": self.rule_id,
            "checks": list(self.checks),
            "bindings": {k: str(v) for k, v in sorted(self.substitution.items())},
            "children": [c.to_dict() for c in self.children],
        }

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


@dataclass
class EvalStats:
    iterations: list = field(default_factory=list)  # per stratum
    facts_derived: int = 0
    rule_firings: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations": list(self.iterations),
            "facts_derived": self.facts_derived,
            "rule_firings": self.rule_firings,
        }


class _ProofMap(Mapping):
    def __init__(self, result: "EvalResult"):
        self._result = result

    def __getitem__(self, f):
        return self._result.explain(f)

    def __iter__(self):
        return iter(self._result.derived)

    def __len__(self):
        return len(self._result.derived)


class EvalResult:
    def __init__(self, derived: FactBase, derivations: dict, rules: list, rule_ids: list,
                 stats: EvalStats):
        self.derived = derived
        self._derivations = derivations  # fact -> list of (rule index, env tuple)
        self._rules = rules
        self._rule_ids = rule_ids
        self._rule_vars = [sorted(_rule_variables(r)) for r in rules]
        self.stats = stats
        self._cache: dict = {}

    @property
    def proofs(self) -> Mapping:
        return _ProofMap(self)

    def rule(self, rule_id: str) -> Rule:
        return self._rules[self._rule_ids.index(rule_id)]

    def derivation_count(self, f: Compound) -> int:
        return len(self._derivations.get(f, ()))

    def explain(self, f: Compound) -> ProofTree:
        if f not in self.derived:
            raise NotDerivedError(str(f))
        cached = self._cache.get(f)
        if cached is not None:
            return cached
        tree = self._build(f, 0)
        self._cache[f] = tree
        return tree

    def all_proofs(self, f: Compound) -> list:
        if f not in self.derived:
            raise NotDerivedError(str(f))
        return [self._build(f, k) for k in range(max(1, self.derivation_count(f)))]

    def _build(self, f: Compound, which: int) -> ProofTree:
        ders = self._derivations.get(f)
        if not ders:
            return ProofTree(f, "extensional")
        ri, values = ders[which]
        rule = self._rules[ri]
        env = dict(zip(self._rule_vars[ri], values))
        children, checks = [], []
        for lit in rule.body:
            if isinstance(lit, Positive):
                if lit.atom.functor.startswith(DEMAND_PREFIX):
                    continue
                children.append(self.explain(apply(env, lit.atom)))
            elif isinstance(lit, Negative):
                checks.append(f"not {apply(env, lit.atom)}")
            elif isinstance(lit, Comparison):
                checks.append(
                    f"{format_expr(eval_expr(lit.lhs, env))} {lit.op} "
                    f"{format_expr(eval_expr(lit.rhs, env))}"
                )
            else:
                checks.append(f"{lit.var} = {format_expr(env[lit.var])}")
        visible = {k: v for k, v in env.items() if not k.startswith("_")}
        return ProofTree(f, self._rule_ids[ri], children, checks, visible)


def _rule_variables(rule: Rule) -> set:
    names = set(variables(rule.head))
    for lit in rule.body:
        names.update(literal_variables(lit))
    return names


# -- demand rewriting ----------------------------------------------------

def _demand_atom(sig: Signature, args) -> Compound:
    return Compound(f"{DEMAND_PREFIX}{sig[0]}/{sig[1]}", list(args))


def _rewrite_demand(rules: list, rule_ids: list):
    """Add ``$demand`` guards to rules whose head variables their callers must bind."""
    demands = demand_positions(rules)
    if not demands:
        return rules, rule_ids
    check_demand(rules, demands)
    guarded = []
    for rule in rules:
        ps = demands.get(rule.head.signature)
        if ps and unsafe_variables(rule):
            guard = Positive(_demand_atom(rule.head.signature, [rule.head.args[p] for p in ps]))
            rule = Rule(rule.head, (guard,) + rule.body)
        guarded.append(rule)
    extra, extra_ids = [], []
    for sig, ps in demands.items():
        for n, (caller, k) in enumerate(_sites(guarded, sig)):
            call = caller.body[k]
            head = _demand_atom(sig, [call.atom.args[p] for p in ps])
            rest = [lit for j, lit in enumerate(caller.body) if j != k]
            positives = [lit for lit in rest if isinstance(lit, Positive)]
            bound = bound_variables(Rule(caller.head, tuple(positives)))
            body = list(positives)
            for lit in rest:
                if isinstance(lit, Assignment) and set(expr_variables(lit.expr)) <= bound:
                    body.append(lit)
                    bound.add(lit.var)
            for lit in rest:
                if isinstance(lit, Comparison) and set(literal_variables(lit)) <= bound:
                    body.append(lit)
            extra.append(Rule(head, tuple(body)))
            extra_ids.append(f"{head.functor}#{n}")
    return guarded + extra, rule_ids + extra_ids


def _sites(rules, sig):
    for rule in rules:
        for k, lit in enumerate(rule.body):
            if isinstance(lit, (Positive, Negative)) and lit.atom.signature == sig:
                yield rule, k


# -- evaluation ----------------------------------------------------------

def _as_facts(base) -> list:
    if base is None:
        return []
    return list(base)


def evaluate(program: Program, base=None, all_proofs: bool = False) -> EvalResult:
    """Compute the perfect model of ``program`` over ``base`` (a FactBase or iterable of facts)."""
    rules = list(program.rules)
    heads = {r.head.signature for r in rules}
    for f in program.facts:
        if f.signature in heads:
            raise MixedPredicateError(f.signature)
    check_recursive_assignments(rules)
    rule_ids = program.rule_ids()
    rules, rule_ids = _rewrite_demand(rules, rule_ids)
    strat = _stratify(rules)

    store = _Store()
    initial = list(dict.fromkeys(list(program.facts) + _as_facts(base)))
    for f in initial:
        if not isinstance(f, Compound) or not f._ground:
            raise ValueError(f"non-ground fact: {f}")
    initial.sort(key=sort_key)
    for f in initial:
        store.add(f)

    derivations: dict = {}
    stats = EvalStats()
    rule_vars = [sorted(_rule_variables(r)) for r in rules]
    for stratum in strat.strata:
        members = set(stratum)
        idx = [i for i, r in enumerate(rules) if r.head.signature in members]
        stats.iterations.append(
            _evaluate_stratum(rules, idx, members, store, derivations, rule_vars, rule_ids,
                              stats, all_proofs)
        )

    derived = FactBase()
    for f in store.facts:
        if not f.functor.startswith(DEMAND_PREFIX):
            derived.insert(f)
    visible = {f: d for f, d in derivations.items() if not f.functor.startswith(DEMAND_PREFIX)}
    stats.facts_derived = len(visible)
    return EvalResult(derived, derivations, rules, rule_ids, stats)


def _evaluate_stratum(rules, idx, members, store, derivations, rule_vars, rule_ids, stats,
                      all_proofs) -> int:
    full_plans = {i: _Plan(rules[i], None) for i in idx}
    delta_plans = {
        i: [(k, _Plan(rules[i], k)) for k, lit in enumerate(rules[i].body)
            if isinstance(lit, Positive) and lit.atom.signature in members]
        for i in idx
    }
    seen_derivations: set = set()

    def fire(i, plan, delta_rel, new):
        names = rule_vars[i]
        pick = operator.itemgetter(*names) if len(names) > 1 else None
        facts = store.facts

        def values_of(env):
            if pick is not None:
                return pick(env)
            return tuple(env[v] for v in names)

        def on_match(env):
            stats.rule_firings += 1
            head = plan.head(env)
            if head in facts:
                if all_proofs and head in derivations:
                    record(head, i, values_of(env))
                return
            values = values_of(env)
            if head in new:
                if all_proofs:
                    record(head, i, values)
                return
            new[head] = None
            derivations[head] = [(i, values)]
            if all_proofs:
                seen_derivations.add((head, i, values))

        _run(plan, store, delta_rel, rule_ids[i], on_match)

    def record(head, i, values):
        key = (head, i, values)
        if key not in seen_derivations:
            seen_derivations.add(key)
            derivations[head].append((i, values))

    iterations = 1
    new: dict = {}
    for i in idx:
        fire(i, full_plans[i], None, new)
    delta = sorted(new, key=sort_key)
    for f in delta:
        store.add(f)
    while delta:
        iterations += 1
        delta_rel: dict = {}
        for f in delta:
            for key in bucket_keys(f):
                delta_rel.setdefault(key, []).append(f)
        new = {}
        for i in idx:
            for _, plan in delta_plans[i]:
                if plan.delta_pattern.relkey in delta_rel:
                    fire(i, plan, delta_rel, new)
        delta = sorted(new, key=sort_key)
        for f in delta:
            store.add(f)
    return iterations


def _run(plan: _Plan, store: _Store, delta_rel, location: str, emit) -> None:
    """Call ``emit(env)`` for every environment satisfying the plan's body.

    The environment dict is reused between calls; copy it to keep it.
    """
    steps = plan.steps
    n = len(steps)
    env: dict = {}
    facts = store.facts

    def rec(s):
        if s == n:
            emit(env)
            return
        step = steps[s]
        kind = step[0]
        if kind == _STEP_JOIN:
            pat, is_delta = step[1], step[2]
            if is_delta:
                probe = pat.probe_key(env)
                candidates = [f for f in delta_rel.get(pat.relkey, ()) if pat.shape_ok(f)
                              and pat.fact_key(f) == probe]
            else:
                candidates = store.index(pat).get(pat.probe_key(env), ())
            binds, eqs = pat.binds, pat.eqs
            nxt = s + 1
            for f in candidates:
                for name, get in binds:
                    env[name] = get(f)
                if eqs and any(get(f) != env[name] for get, name in eqs):
                    continue
                rec(nxt)
            for name, _ in binds:
                env.pop(name, None)
        elif kind == _STEP_NEG:
            if step[1](env) not in facts:
                rec(s + 1)
        elif kind == _STEP_CMP:
            try:
                ok = step[1](env)
            except EsnArithmeticError as exc:
                raise exc.at(_locate(location, env)) from None
            if ok:
                rec(s + 1)
        elif kind == _STEP_SOLVE:
            try:
                env[step[1]] = step[2](env)
            except EsnArithmeticError:
                return  # no value satisfies the assignment
            rec(s + 1)
            del env[step[1]]
        else:
            _, var, fn, check_only = step
            try:
                value = fn(env)
            except EsnArithmeticError as exc:
                raise exc.at(_locate(location, env)) from None
            if check_only or var in env:
                if env.get(var) == value:
                    rec(s + 1)
            else:
                env[var] = value
                rec(s + 1)
                del env[var]

    rec(0)


def _locate(rule_id: str, env: dict) -> str:
    shown = ", ".join(f"{k}={v}" for k, v in sorted(env.items()) if not k.startswith("_"))
    return f"rule {rule_id} with {{{shown}}}"


# -- queries -------------------------------------------------------------

def run_query(program: Program, query: Program, base=None, all_proofs: bool = False):
    """Evaluate ``program`` and ``query`` together; return ``(shown facts, EvalResult)``."""
    clash = query.head_signatures() & (program.head_signatures() | program.fact_signatures())
    if clash:
        names = ", ".join(f"{f}/{n}" for f, n in sorted(clash))
        raise ConflictError(f"query redefines predicate(s): {names}")
    result = evaluate(program.merge(query), base, all_proofs)
    return shown_facts(result, query.shows), result


def solve(program: Program, query: Program, base=None) -> list:
    """Evaluate ``program`` and ``query`` together; return shown facts in sorted order."""
    return run_query(program, query, base)[0]


def relevant_rules(program: Program, query: Program) -> Program:
    """Restrict ``program`` to the rules the query's rules can reach; facts are kept."""
    by_head: dict = {}
    for r in program.rules:
        by_head.setdefault(r.head.signature, []).append(r)
    todo = [lit.atom.signature for r in query.rules for lit in r.body
            if isinstance(lit, (Positive, Negative))]
    todo += [tuple(s) for s in query.shows]
    seen = set()
    while todo:
        sig = todo.pop()
        if sig in seen:
            continue
        seen.add(sig)
        for r in by_head.get(sig, ()):
            todo.extend(lit.atom.signature for lit in r.body if isinstance(lit, (Positive, Negative)))
    keep = tuple(r for r in program.rules if r.head.signature in seen)
    return Program(program.facts, keep, program.shows, program.allows, program.denies)


def shown_facts(result: EvalResult, shows) -> list:
    out = []
    for sig in shows:
        out.extend(f for f in result.derived if f.signature == tuple(sig))
    return sorted(set(out), key=sort_key)


def explain(result: EvalResult, f: Compound) -> ProofTree:
    return result.explain(f)


def replay(result: EvalResult, tree: ProofTree) -> bool:
    """Re-derive ``tree.root`` from its rule, substitution and children."""
    if tree.rule_id == "extensional":
        return tree.root in result.derived and not tree.children
    rule = result.rule(tree.rule_id)
    ri = result._rule_ids.index(tree.rule_id)
    values = result._derivations[tree.root][0][1]
    env = dict(zip(result._rule_vars[ri], values))
    if apply(env, rule.head) != tree.root:
        return False
    positives = [apply(env, lit.atom) for lit in rule.body
                 if isinstance(lit, Positive) and not lit.atom.functor.startswith(DEMAND_PREFIX)]
    if positives != [c.root for c in tree.children]:
        return False
    for lit in rule.body:
        if isinstance(lit, Positive) and apply(env, lit.atom) not in result.derived \
                and not lit.atom.functor.startswith(DEMAND_PREFIX):
            return False
        if isinstance(lit, Negative) and apply(env, lit.atom) in result.derived:
            return False
        if isinstance(lit, Comparison) and not compare(
                lit.op, eval_expr(lit.lhs, env), eval_expr(lit.rhs, env)):
            return False
        if isinstance(lit, Assignment) and env[lit.var] != eval_expr(lit.expr, env):
            return False
    return all(replay(result, c) for c in tree.children)
