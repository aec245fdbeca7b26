"""STL formulas over scalar band predicates.

Surface grammar (precedence: unary > U > & > |)::

    phi := label | !phi | G[a,b] phi | F[a,b] phi | phi U[a,b] phi
         | phi & phi | phi | phi | ( phi )

Negation is only allowed over predicates (and over &/| of predicates, which is
pushed down with De Morgan). A negated band predicate flips the sign of h.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union


@dataclass(frozen=True)
class BandPredicate:
    """h(x) = c * (r^2 - (x - x0)^2); true on the band |x - x0| <= r."""

    label: str
    c: float
    r: float
    x0: float

    def __post_init__(self):
        if not self.c > 0 or not self.r > 0:
            raise ValueError(f"band predicate {self.label!r} needs c > 0 and r > 0")

    @property
    def peak(self) -> float:
        return self.c * self.r * self.r

    def h(self, x, negated: bool = False):
        v = self.c * (self.r * self.r - (x - self.x0) ** 2)
        return -v if negated else v

    def dh(self, x, negated: bool = False):
        d = -2.0 * self.c * (x - self.x0)
        return -d if negated else d


def eval_predicate(p: BandPredicate, x: float) -> float:
    return p.h(x)


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Pred:
    label: str
    negated: bool = False


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Always:
    lo: float
    hi: float
    child: "Formula"


@dataclass(frozen=True)
class Eventually:
    lo: float
    hi: float
    child: "Formula"


@dataclass(frozen=True)
class Until:
    lo: float
    hi: float
    left: "Formula"
    right: "Formula"


# Produced by normalize_until only. Both halves of one until carry the same
# slot; lo/hi are the bounds of the original until, tau ranges over [0, hi-lo].
@dataclass(frozen=True)
class UntilLeft:
    lo: float
    hi: float
    child: "Formula"
    slot: int


@dataclass(frozen=True)
class UntilRight:
    lo: float
    hi: float
    child: "Formula"
    slot: int


Formula = Union[Pred, And, Or, Always, Eventually, Until, UntilLeft, UntilRight]
TEMPORAL = (Always, Eventually, Until, UntilLeft, UntilRight)


def children(f) -> tuple:
    if isinstance(f, Pred):
        return ()
    if isinstance(f, (And, Or)):
        return f.children
    if isinstance(f, Until):
        return (f.left, f.right)
    return (f.child,)


def walk(f):
    """Pre-order traversal."""
    yield f
    for c in children(f):
        yield from walk(c)


def labels(f) -> list[str]:
    return [g.label for g in walk(f) if isinstance(g, Pred)]


def horizon(f) -> float:
    """Length of signal needed past the evaluation time."""
    if isinstance(f, Pred):
        return 0.0
    if isinstance(f, (And, Or)):
        return max(horizon(c) for c in f.children)
    if isinstance(f, Until):
        return f.hi + max(horizon(f.left), horizon(f.right))
    if isinstance(f, UntilLeft):
        return f.hi + horizon(f.child)
    return f.hi + horizon(f.child)


def depth(f) -> int:
    """Temporal nesting depth."""
    sub = max((depth(c) for c in children(f)), default=0)
    return sub + (1 if isinstance(f, TEMPORAL) else 0)


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def to_text(f) -> str:
    """Canonical text; reparses to an equal AST for un-normalized formulas."""
    if isinstance(f, Pred):
        return ("!" if f.negated else "") + f.label
    if isinstance(f, And):
        return " & ".join(_wrap(c, (Or, And)) for c in f.children)
    if isinstance(f, Or):
        return " | ".join(_wrap(c, (Or,)) for c in f.children)
    if isinstance(f, Always):
        return f"G[{_num(f.lo)},{_num(f.hi)}]({to_text(f.child)})"
    if isinstance(f, Eventually):
        return f"F[{_num(f.lo)},{_num(f.hi)}]({to_text(f.child)})"
    if isinstance(f, Until):
        return (f"({to_text(f.left)}) U[{_num(f.lo)},{_num(f.hi)}] "
                f"({to_text(f.right)})")
    if isinstance(f, UntilLeft):
        return f"G[0,{_num(f.lo)}+t{f.slot}]({to_text(f.child)})"
    if isinstance(f, UntilRight):
        return f"F[{_num(f.lo)}+t{f.slot},{_num(f.lo)}+t{f.slot}]({to_text(f.child)})"
    raise TypeError(f)


def _wrap(f, loose) -> str:
    s = to_text(f)
    return f"({s})" if isinstance(f, loose) else s


# --- parser ----------------------------------------------------------------


class FormulaSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{msg} at position {pos}")


class UnknownPredicate(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)|"
                    r"(?P<op>[GFU])\s*(?=\[)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|"
                    r"(?P<sym>[()\[\],&|!-]))")


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise FormulaSyntaxError(f"unexpected character {text[pos:].lstrip()[0]!r}",
                                     len(text) - len(text[pos:].lstrip()), text)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, predicates):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.predicates = predicates

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None, kind=None):
        tok = self.toks[self.i]
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value if value is not None else kind
            got = tok[1] or "end of input"
            raise FormulaSyntaxError(f"expected {want!r}, got {got!r}", tok[2], self.text)
        self.i += 1
        return tok

    def parse(self):
        f = self.disjunction()
        kind, val, pos = self.peek()
        if kind != "end":
            raise FormulaSyntaxError(f"unexpected {val!r}", pos, self.text)
        return f

    def disjunction(self):
        parts = [self.conjunction()]
        while self.peek()[1] == "|":
            self.take("|")
            parts.append(self.conjunction())
        return _flat(Or, parts)

    def conjunction(self):
        parts = [self.until()]
        while self.peek()[1] == "&":
            self.take("&")
            parts.append(self.until())
        return _flat(And, parts)

    def until(self):
        left = self.unary()
        if self.peek()[1] == "U":
            self.take("U")
            lo, hi = self.interval()
            right = self.until()  # right associative
            return Until(lo, hi, left, right)
        return left

    def interval(self):
        _, _, pos = self.take("[")
        lo = self.bound()
        self.take(",")
        hi = self.bound()
        self.take("]")
        if lo > hi:
            raise FormulaSyntaxError(f"interval [{lo},{hi}] has lower bound above upper",
                                     pos, self.text)
        return lo, hi

    def bound(self):
        kind, val, pos = self.peek()
        if val == "-":
            raise FormulaSyntaxError("negative interval bound", pos, self.text)
        return float(self.take(kind="num")[1])

    def unary(self):
        kind, val, pos = self.peek()
        if val == "!":
            self.take("!")
            inner = self.unary()
            return _negate(inner, pos, self.text)
        if kind == "op" and val in "GF":
            self.take(val)
            lo, hi = self.interval()
            child = self.unary()
            return Always(lo, hi, child) if val == "G" else Eventually(lo, hi, child)
        if val == "(":
            self.take("(")
            f = self.disjunction()
            self.take(")")
            return f
        if kind == "id":
            self.take()
            if self.predicates is not None and val not in self.predicates:
                raise UnknownPredicate(f"unknown predicate label {val!r} at position {pos}")
            return Pred(val)
        raise FormulaSyntaxError(f"unexpected {val or 'end of input'!r}", pos, self.text)


def _flat(cls, parts):
    if len(parts) == 1:
        return parts[0]
    out = []
    for p in parts:
        out.extend(p.children if isinstance(p, cls) else (p,))
    return cls(tuple(out))


def _negate(f, pos, text):
    if isinstance(f, Pred):
        return Pred(f.label, not f.negated)
    if isinstance(f, And):
        return _flat(Or, [_negate(c, pos, text) for c in f.children])
    if isinstance(f, Or):
        return _flat(And, [_negate(c, pos, text) for c in f.children])
    raise FormulaSyntaxError("negation over temporal operators is not supported", pos, text)


def parse_formula(text: str, predicates: Mapping[str, BandPredicate] | None = None):
    """Parse `text`. With a predicate map, every label must be declared in it."""
    return _Parser(text, predicates).parse()


# --- until normalization ---------------------------------------------------


def normalize_until(f):
    """Rewrite each Until into And(UntilLeft, UntilRight) sharing a fresh slot.

    Slots are numbered in pre-order after any already-present shared slots, so
    the rewrite is idempotent.
    """
    used = [g.slot for g in walk(f) if isinstance(g, (UntilLeft, UntilRight))]
    counter = iter(range(max(used, default=-1) + 1, 1 << 30))

    def rec(g):
        if isinstance(g, Pred):
            return g
        if isinstance(g, (And, Or)):
            return _flat(type(g), [rec(c) for c in g.children])
        if isinstance(g, Until):
            slot = next(counter)
            return _flat(And, [UntilLeft(g.lo, g.hi, rec(g.left), slot),
                               UntilRight(g.lo, g.hi, rec(g.right), slot)])
        return type(g)(**{**g.__dict__, "child": rec(g.child)})

    return rec(f)
