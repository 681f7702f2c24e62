"""Ground representation of ESN: terms, facts, substitutions and fact bases.

Terms are immutable and hashable.  A fact is a ground :class:`Compound`;
``holds(F, T)``, ``occurs(E, T)`` and timeless static facts share that single
representation and differ only by functor.
"""

from __future__ import annotations

from typing import Dict, Iterable, Iterator, Optional, Tuple, Union

from .errors import EsnError
from .numeric import Numeric

Signature = Tuple[str, int]


class Symbol:
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __setattr__(self, name, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        return isinstance(other, Symbol) and other.name == self.name

    def __hash__(self):
        return hash(("sym", self.name))

    def __repr__(self):
        return f"Symbol({self.name!r})"

    def __str__(self):
        return self.name


class Text:
    __slots__ = ("value",)

    def __init__(self, value: str):
        object.__setattr__(self, "value", value)

    def __setattr__(self, name, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        return isinstance(other, Text) and other.value == self.value

    def __hash__(self):
        return hash(("text", self.value))

    def __repr__(self):
        return f"Text({self.value!r})"

    def __str__(self):
        escaped = self.value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{escaped}"'


class Variable:
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __setattr__(self, name, value):
        raise AttributeError("terms are immutable")

    def __eq__(self, other):
        return isinstance(other, Variable) and other.name == self.name

    def __hash__(self):
        return hash(("var", self.name))

    def __repr__(self):
        return f"Variable({self.name!r})"

    def __str__(self):
        return self.name


class Compound:
    """``functor(args...)``; zero arguments denotes a propositional atom."""

    __slots__ = ("functor", "args", "_hash", "_ground", "_key")

    def __init__(self, functor: str, args: Iterable["Term"] = ()):
        args = tuple(args)
        ground = True
        for a in args:
            kind = type(a)
            if kind is Variable or (kind is Compound and not a._ground):
                ground = False
                break
        _set = object.__setattr__
        _set(self, "functor", functor)
        _set(self, "args", args)
        _set(self, "_hash", hash((functor, args)))
        _set(self, "_ground", ground)
        _set(self, "_key", None)

    def __setattr__(self, name, value):
        raise AttributeError("terms are immutable")

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def signature(self) -> Signature:
        return (self.functor, len(self.args))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Compound)
            and other._hash == self._hash
            and other.functor == self.functor
            and other.args == self.args
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Compound({self.functor!r}, {list(self.args)!r})"

    def __str__(self):
        if not self.args:
            return self.functor
        return f"{self.functor}({', '.join(str(a) for a in self.args)})"


Term = Union[Symbol, Numeric, Text, Variable, Compound]
Substitution = Dict[str, Term]


class GroundnessError(EsnError):
    pass


def is_ground(t: Term) -> bool:
    if isinstance(t, Variable):
        return False
    if isinstance(t, Compound):
        return t._ground
    return True


def variables(t: Term) -> list[str]:
    """Variable names of ``t`` in first-occurrence order."""
    out: list[str] = []

    def walk(x):
        if isinstance(x, Variable):
            if x.name not in out:
                out.append(x.name)
        elif isinstance(x, Compound) and not x._ground:
            for a in x.args:
                walk(a)

    walk(t)
    return out


def match(pattern: Term, ground: Term, seed: Optional[Substitution] = None) -> Optional[Substitution]:
    """Extend ``seed`` minimally so that ``pattern`` instantiates to ``ground``.

    Returns ``None`` when no such extension exists.  ``seed`` is not modified.
    """
    sub = dict(seed) if seed else {}
    return sub if _match_into(pattern, ground, sub) else None


def _match_into(p: Term, g: Term, sub: Substitution) -> bool:
    if isinstance(p, Variable):
        bound = sub.get(p.name)
        if bound is None:
            sub[p.name] = g
            return True
        return bound == g
    if isinstance(p, Compound):
        if p._ground:
            return p == g
        if not isinstance(g, Compound) or g.functor != p.functor or len(g.args) != len(p.args):
            return False
        return all(_match_into(a, b, sub) for a, b in zip(p.args, g.args))
    return p == g


def apply(sub: Substitution, t: Term) -> Term:
    if isinstance(t, Variable):
        return sub.get(t.name, t)
    if isinstance(t, Compound) and not t._ground:
        return Compound(t.functor, [apply(sub, a) for a in t.args])
    return t


def compose(first: Substitution, second: Substitution) -> Substitution:
    """Substitution equivalent to applying ``first`` then ``second``."""
    out = {k: apply(second, v) for k, v in first.items()}
    for k, v in second.items():
        out.setdefault(k, v)
    return out


# -- ordering ------------------------------------------------------------

def sort_key(t: Term) -> tuple:
    """Total order: numbers < symbols < texts < compounds (by functor, arity, args)."""
    kind = type(t)
    if kind is Numeric:
        return (0, t.scaled)
    if kind is Symbol:
        return (1, t.name)
    if kind is Text:
        return (2, t.value)
    if kind is Compound:
        key = t._key
        if key is None:
            key = (3, t.functor, len(t.args), tuple([sort_key(a) for a in t.args]))
            object.__setattr__(t, "_key", key)
        return key
    return (4, t.name)


def compare_terms(a: Term, b: Term) -> int:
    ka, kb = sort_key(a), sort_key(b)
    return (ka > kb) - (ka < kb)


# -- convenience constructors -------------------------------------------

def num(value) -> Numeric:
    return Numeric.of(value)


def sym(name: str) -> Symbol:
    return Symbol(name)


def atom(functor: str, *args) -> Compound:
    """Build a compound from Python values.

    Lowercase strings become symbols, capitalised or ``_``-prefixed strings
    become variables, and numbers become :class:`Numeric`.
    """
    return Compound(functor, [_coerce(a) for a in args])


def _coerce(value) -> Term:
    if isinstance(value, (Symbol, Numeric, Text, Variable, Compound)):
        return value
    if isinstance(value, str):
        if value[:1].isupper() or value.startswith("_"):
            return Variable(value)
        return Symbol(value)
    return Numeric.of(value)


def fact_signature(f: Compound) -> Signature:
    """Predicate signature used by export policies: holds/occurs facts report their inner atom."""
    if f.functor in ("holds", "occurs") and len(f.args) == 2 and isinstance(f.args[0], Compound):
        return f.args[0].signature
    return f.signature


# -- fact base ----------------------------------------------------------

_TEMPORAL = ("holds", "occurs")


class FactBase:
    """Deduplicated, insertion-ordered set of ground facts.

    Facts are bucketed by ``(functor, arity)``; ``holds``/``occurs`` facts are
    additionally bucketed by the functor and arity of their first argument.
    """

    def __init__(self, facts: Iterable[Compound] = ()):
        self._facts: dict[Compound, None] = {}
        self._by_sig: dict[tuple, dict[Compound, None]] = {}
        for f in facts:
            self.insert(f)

    def insert(self, f: Compound) -> bool:
        if not isinstance(f, Compound):
            raise GroundnessError(f"facts must be compound atoms, got {f!r}")
        if not f._ground:
            raise GroundnessError(f"non-ground fact: {f}")
        if f in self._facts:
            return False
        self._facts[f] = None
        by_sig = self._by_sig
        args = f.args
        key = (f.functor, len(args))
        bucket = by_sig.get(key)
        if bucket is None:
            bucket = by_sig[key] = {}
        bucket[f] = None
        if len(args) == 2 and type(args[0]) is Compound and f.functor in _TEMPORAL:
            inner = args[0]
            key = (f.functor, 2, inner.functor, len(inner.args))
            bucket = by_sig.get(key)
            if bucket is None:
                bucket = by_sig[key] = {}
            bucket[f] = None
        return True

    def update(self, facts: Iterable[Compound]) -> int:
        return sum(1 for f in facts if self.insert(f))

    def __contains__(self, f) -> bool:
        return f in self._facts

    def __iter__(self) -> Iterator[Compound]:
        return iter(self._facts)

    def __len__(self) -> int:
        return len(self._facts)

    def __eq__(self, other):
        if not isinstance(other, FactBase):
            return NotImplemented
        return self._facts.keys() == other._facts.keys()

    def bucket(self, functor: str, arity: int, inner: Optional[Signature] = None) -> list[Compound]:
        key = (functor, arity) if inner is None else (functor, arity, *inner)
        return list(self._by_sig.get(key, ()))

    def signatures(self) -> list[Signature]:
        return [k for k in self._by_sig if len(k) == 2]

    def sorted(self) -> list[Compound]:
        return sorted(self._facts, key=sort_key)

    def copy(self) -> "FactBase":
        return FactBase(self._facts)

    def __repr__(self):
        return f"FactBase({len(self)} facts)"


def bucket_keys(f: Compound) -> list[tuple]:
    keys = [(f.functor, len(f.args))]
    if f.functor in ("holds", "occurs") and len(f.args) == 2 and isinstance(f.args[0], Compound):
        inner = f.args[0]
        keys.append((f.functor, 2, inner.functor, len(inner.args)))
    return keys


def insert(fb: FactBase, f: Compound) -> bool:
    return fb.insert(f)
