"""Time-window operators on value functions and their nesting calculus.

A layer shifts a value function by alpha(tau) and holds h on (alpha, beta].
Nesting an always-type layer over a layer with free parameters repeats the
inner window: each new window starts where the previous one elapsed, so the
live window only depends on the newest free slots plus frozen history.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

ALWAYS, EVENTUALLY, UNTIL_LEFT, UNTIL_RIGHT, IDENTITY = (
    "always", "eventually", "until_left", "until_right", "identity")

_fresh = itertools.count(10_000)


def new_slot() -> int:
    return next(_fresh)


class WindowElapsed(RuntimeError):
    """Operator queried past its active window without advancing."""


class MissingSlot(KeyError):
    pass


@dataclass(frozen=True)
class WindowFunction:
    """a0 + sum_i a1[i] * tau[slots[i]], nonnegative offset and coefficients."""

    a0: float = 0.0
    a1: tuple = ()
    slots: tuple = ()

    def __post_init__(self):
        if len(self.a1) != len(self.slots):
            raise ValueError("one coefficient per slot")
        if self.a0 < 0 or any(c < 0 for c in self.a1):
            raise ValueError("window functions need nonnegative offset and coefficients")

    @classmethod
    def const(cls, v: float) -> "WindowFunction":
        return cls(float(v))

    def __call__(self, tau: Mapping[int, float] | None = None) -> float:
        return window_eval(self, tau)

    def __add__(self, other) -> "WindowFunction":
        if not isinstance(other, WindowFunction):
            return WindowFunction(self.a0 + float(other), self.a1, self.slots)
        coef = dict(zip(self.slots, self.a1))
        for s, c in zip(other.slots, other.a1):
            coef[s] = coef.get(s, 0.0) + c
        return WindowFunction(self.a0 + other.a0, tuple(coef.values()), tuple(coef.keys()))

    __radd__ = __add__

    def slope(self, slot: int) -> float:
        return sum(c for s, c in zip(self.slots, self.a1) if s == slot)

    def substitute(self, values: Mapping[int, float]) -> "WindowFunction":
        if not any(s in values for s in self.slots):
            return self
        a0, a1, slots = self.a0, [], []
        for s, c in zip(self.slots, self.a1):
            if s in values:
                a0 += c * values[s]
            else:
                a1.append(c)
                slots.append(s)
        return WindowFunction(a0, tuple(a1), tuple(slots))

    def extreme(self, box: "ParamBox", upper: bool) -> float:
        """Max (upper) or min of the function over a box of slot bounds."""
        v = self.a0
        for s, c in zip(self.slots, self.a1):
            lo, hi = box[s]
            v += c * (hi if upper else lo)
        return v

    def __str__(self):
        terms = [f"{self.a0:g}"] + [f"{c:g}*t{s}" if c != 1 else f"t{s}"
                                    for s, c in zip(self.slots, self.a1)]
        return "+".join(terms)


def window_eval(w: WindowFunction, tau: Mapping[int, float] | None) -> float:
    v = w.a0
    for s, c in zip(w.slots, w.a1):
        if tau is None or s not in tau:
            raise MissingSlot(f"no value for slot {s}")
        v += c * tau[s]
    return v


@dataclass(frozen=True)
class ParamBox:
    """Per-slot intervals, slot -> (lo, hi). Empty for parameter-free layers."""

    bounds: tuple = ()  # ((slot, lo, hi), ...)

    def __post_init__(self):
        for s, lo, hi in self.bounds:
            if lo > hi:
                raise ValueError(f"slot {s}: empty interval [{lo}, {hi}]")

    def __getitem__(self, slot):
        for s, lo, hi in self.bounds:
            if s == slot:
                return lo, hi
        raise MissingSlot(f"slot {slot} not in box")

    def __contains__(self, slot):
        return any(s == slot for s, _, _ in self.bounds)

    def __or__(self, other: "ParamBox") -> "ParamBox":
        seen = {s for s, _, _ in self.bounds}
        return ParamBox(self.bounds + tuple(b for b in other.bounds if b[0] not in seen))

    @property
    def slots(self) -> tuple:
        return tuple(s for s, _, _ in self.bounds)

    def lower(self) -> dict:
        return {s: lo for s, lo, _ in self.bounds}

    def upper(self) -> dict:
        return {s: hi for s, _, hi in self.bounds}

    def __len__(self):
        return len(self.bounds)


@dataclass(frozen=True)
class OperatorLayer:
    kind: str
    alpha: WindowFunction
    beta: WindowFunction
    theta: ParamBox
    t_lo: float = 0.0
    t_hi: float = 0.0
    node: int | None = None  # originating tree vertex, set by taskgraph

    @property
    def slot(self) -> int | None:
        return self.theta.slots[0] if len(self.theta) else None


def _check(t_lo, t_hi):
    if not 0 <= t_lo <= t_hi:
        raise ValueError(f"invalid interval [{t_lo}, {t_hi}]")


def layer_always(t_lo: float, t_hi: float, node=None) -> OperatorLayer:
    _check(t_lo, t_hi)
    return OperatorLayer(ALWAYS, WindowFunction.const(t_lo), WindowFunction.const(t_hi),
                         ParamBox(), t_lo, t_hi, node)


def layer_eventually(t_lo: float, t_hi: float, slot: int | None = None, node=None) -> OperatorLayer:
    _check(t_lo, t_hi)
    s = new_slot() if slot is None else slot
    w = WindowFunction(float(t_lo), (1.0,), (s,))
    return OperatorLayer(EVENTUALLY, w, w, ParamBox(((s, 0.0, t_hi - t_lo),)), t_lo, t_hi, node)


def layer_until(t_lo: float, t_hi: float, slot: int | None = None, node=None):
    """(left, right, slot): left holds on [0, t_lo+tau], right is the point t_lo+tau."""
    _check(t_lo, t_hi)
    s = new_slot() if slot is None else slot
    box = ParamBox(((s, 0.0, t_hi - t_lo),))
    w = WindowFunction(float(t_lo), (1.0,), (s,))
    left = OperatorLayer(UNTIL_LEFT, WindowFunction(), w, box, t_lo, t_hi, node)
    right = OperatorLayer(UNTIL_RIGHT, w, w, box, t_lo, t_hi, node)
    return left, right, s


def layer_identity() -> OperatorLayer:
    return OperatorLayer(IDENTITY, WindowFunction(), WindowFunction(), ParamBox())


def repeats(layers: Sequence[OperatorLayer], i: int) -> bool:
    """Layer i re-arms its inner window after each elapse."""
    return (layers[i].kind in (ALWAYS, UNTIL_LEFT)
            and any(len(L.theta) for L in layers[i + 1:]))


@dataclass
class WindowRecord:
    counters: tuple
    alpha: float
    beta: float
    frozen: dict


@dataclass(eq=False)
class NestedOperator:
    """Composed window stack for one predicate occurrence (outermost first).

    Mutable: `advance` moves it through its windows. Frozen slot values are
    substituted into every stored window function.
    """

    layers: list
    start: float = 0.0
    label: str = ""
    frozen: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)  # rep layer -> instance index j
    inst: dict = field(default_factory=dict)  # rep layer -> anchor (None = first)
    history: dict = field(default_factory=dict)  # rep layer -> elapsed times this run
    log: list = field(default_factory=list)
    complete: bool = False

    def __post_init__(self):
        self.layers = [L for L in self.layers if L.kind != IDENTITY]
        if not self.layers:
            raise ValueError("operator needs at least one non-identity layer")
        self.rep = [i for i in range(len(self.layers)) if repeats(self.layers, i)]
        for i in self.rep:
            self.counters.setdefault(i, 1)
            self.inst.setdefault(i, None)
            self.history.setdefault(i, [])

    # -- structure ----------------------------------------------------------

    @property
    def box(self) -> ParamBox:
        b = ParamBox()
        for L in self.layers:
            b = b | L.theta
        return b

    def _base(self, upto: int) -> WindowFunction:
        """Anchor of layer `upto`: where its alpha is measured from."""
        b = WindowFunction.const(self.start)
        for i in range(upto):
            if i in self.inst and self.inst[i] is not None:
                b = self.inst[i]
            else:
                b = b + self.layers[i].alpha
        return b.substitute(self.frozen)

    def window(self) -> tuple[WindowFunction, WindowFunction]:
        """Active (alpha'', beta'') over live slots."""
        m = len(self.layers) - 1
        b = self._base(m)
        L = self.layers[m]
        return (b + L.alpha).substitute(self.frozen), (b + L.beta).substitute(self.frozen)

    def window_values(self, tau=None) -> tuple[float, float]:
        a, b = self.window()
        return a(tau), b(tau)

    def live_slots(self) -> tuple:
        a, b = self.window()
        return tuple(dict.fromkeys(a.slots + b.slots))

    def deadline(self, layer: int) -> WindowFunction:
        return (self._base(layer) + self.layers[layer].beta).substitute(self.frozen)

    def outer_rep(self, layer: int):
        outer = [i for i in self.rep if i < layer]
        return outer[-1] if outer else None

    def first_anchor(self, layer: int) -> WindowFunction:
        return (self._base(layer) + self.layers[layer].alpha).substitute(self.frozen)

    def min_instance_duration(self, layer: int) -> float:
        """Earliest completion of one instance of rep layer `layer`, relative to
        its anchor, with every inner slot at its lower bound."""
        lb = self.box.lower()

        def comp(i, base):
            L = self.layers[i]
            if i == len(self.layers) - 1:
                return base + L.beta(lb)
            if i not in self.rep:
                return comp(i + 1, base + L.alpha(lb))
            s, dl = base + L.alpha(lb), base + L.beta(lb)
            e = comp(i + 1, s)
            if e <= s:
                raise ValueError("repeated fragment has zero minimum duration")
            while e <= dl:
                s, e = e, comp(i + 1, e)
            return e

        d = comp(layer + 1, 0.0)
        if d <= 0:
            raise ValueError("repeated fragment has zero minimum duration")
        return d

    # -- state machine ------------------------------------------------------

    def freeze(self, values: Mapping[int, float]) -> None:
        mine = set(self.box.slots)
        self.frozen.update({s: float(v) for s, v in values.items() if s in mine})

    def unfreeze(self, slots) -> None:
        for s in slots:
            self.frozen.pop(s, None)

    def inner_slots(self, layer: int) -> set:
        return {s for L in self.layers[layer + 1:] for s in L.theta.slots}

    def begin_instance(self, layer: int, anchor: float) -> set:
        """Start the next instance of rep layer `layer` at `anchor`.

        Inner rep layers restart their runs; slots below `layer` are re-minted
        (unfrozen). Returns the re-minted slots.
        """
        self.counters[layer] += 1
        self.inst[layer] = WindowFunction.const(anchor)
        for i in self.rep:
            if i > layer:
                self.counters[i] = 1
                self.inst[i] = None
                self.history[i] = []
        slots = self.inner_slots(layer)
        self.unfreeze(slots)
        return slots

    def record(self, tau) -> WindowRecord:
        a, b = self.window_values(tau)
        live = {s: float(tau[s]) for s in self.live_slots()}
        rec = WindowRecord(tuple(self.counters[i] for i in self.rep), a, b,
                           {**{s: v for s, v in self.frozen.items()}, **live})
        self.log.append(rec)
        return rec

    def advance(self, t: float, tau=None, anchor: float | None = None, eps: float = 1e-9):
        """Close the active window at time t (>= beta''); see module docstring."""
        if self.complete:
            raise RuntimeError("operator already complete")
        a, b = self.window_values(tau)
        if t < b - eps:
            raise WindowElapsed(f"advance at t={t:g} before window end {b:g}")
        self.record(tau)
        self.freeze({s: tau[s] for s in self.live_slots()})
        e = b if anchor is None else anchor
        r = self.rep[-1] if self.rep else None
        while r is not None:
            self.history[r].append(e)
            if e <= self.deadline(r)(tau) + eps:
                self.begin_instance(r, e)
                return self
            r = self.outer_rep(r)
        self.complete = True
        return self

    def debug_dump(self) -> str:
        lines = [f"operator {self.label or '?'}: "
                 + " . ".join(f"{L.kind}[{L.alpha},{L.beta}]" for L in self.layers)]
        for w in self.log:
            fz = ",".join(f"t{s}={v:g}" for s, v in sorted(w.frozen.items()))
            lines.append(f"  j={w.counters} window=[{w.alpha:.6g},{w.beta:.6g}] frozen={{{fz}}}")
        if not self.complete:
            a, b = self.window()
            lines.append(f"  j={tuple(self.counters[i] for i in self.rep)} active=[{a},{b}]")
        return "\n".join(lines)


def as_operator(x) -> NestedOperator:
    return x if isinstance(x, NestedOperator) else NestedOperator([x])


def compose(outer: OperatorLayer, inner) -> NestedOperator:
    inner = as_operator(inner)
    if outer.kind == IDENTITY:
        return inner
    return NestedOperator([outer] + list(inner.layers), label=inner.label)


def operator_value(op: NestedOperator, V, x: float, t: float, tau=None) -> float:
    a, b = op.window_values(tau)
    if t > b + 1e-9:
        raise WindowElapsed(f"t={t:g} is past the active window end {b:g}")
    if t <= a:
        return V.eval(x, t - a)
    return float(V.h(x))


# -- Eq-11 style repetition count -----------------------------------------------


def repetition_done(op: NestedOperator, layer: int, outer_beta: float, history) -> bool:
    """Is the next window of rep layer `layer` the final one?

    history holds the elapsed completion times of this run so far; with an
    empty history the previous completion is the run's first anchor.
    """
    prev = history[-1] if len(history) else op.first_anchor(layer)(op.box.lower())
    return prev <= outer_beta <= prev + op.min_instance_duration(layer)


def repetition_bound(op: NestedOperator, layer: int, max_j: int = 100_000) -> int:
    """Number of windows of `layer` with every parameter at its lower bound."""
    if layer not in op.rep:
        return 1
    lb = op.box.lower()
    outer_beta = op.deadline(layer)(lb)
    d = op.min_instance_duration(layer)
    hist = []
    prev = op.first_anchor(layer)(lb)
    for j in range(1, max_j):
        if repetition_done(op, layer, outer_beta, hist):
            return j
        prev = prev + d
        hist.append(prev)
    raise RuntimeError("repetition count did not converge")


# -- recursive and closed-form window chains ----------------------------------


def chain_recursive(alpha_outer: float, inner_alpha, inner_beta, taus):
    """Windows (alpha''_j, beta''_j) by the recursion: the first starts at the
    outer alpha, each next one at the previous beta''."""
    out = []
    for j, t in enumerate(taus):
        base = alpha_outer if j == 0 else out[-1][1]
        out.append((base + inner_alpha(t), base + inner_beta(t)))
    return out


def chain_closed_form(alpha_outer: float, inner_alpha, inner_beta, taus, J: int):
    """alpha''_J, beta''_J as outer alpha + sum of the previous betas."""
    acc = alpha_outer + sum(inner_beta(t) for t in taus[:J - 1])
    return acc + inner_alpha(taus[J - 1]), acc + inner_beta(taus[J - 1])


def ordering_dominates(w1, w2, t: float) -> bool:
    """w = (alpha, beta, box). True when alpha1 <= alpha2 over the boxes and t
    lies in [0, min(alpha2, beta1)], where T1 V >= 0 implies T2 V >= 0."""
    a1, b1, box1 = w1
    a2, b2, box2 = w2
    if a1.extreme(box1, upper=True) > a2.extreme(box2, upper=False):
        return False
    return 0.0 <= t <= min(a2.extreme(box2, upper=False), b1.extreme(box1, upper=False))
