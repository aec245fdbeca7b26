"""Formula trees, the min/max satisfaction function and parameter sharing.

The STL tree mirrors the until-normalized formula. Removing its temporal
vertices gives the logic tree, whose leaves carry the composed window stack of
every temporal ancestor. Folding the logic tree bottom-up (deepest groups
first) yields sigma, with and -> min and or -> max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import formula as fm
from .operator import (NestedOperator, OperatorLayer, ParamBox, layer_always,
                       layer_eventually, layer_until, operator_value)

_KIND = {fm.Always: "always", fm.Eventually: "eventually", fm.UntilLeft: "until_left",
         fm.UntilRight: "until_right", fm.And: "and", fm.Or: "or", fm.Pred: "pred"}
TEMPORAL_KINDS = ("always", "eventually", "until_left", "until_right")


@dataclass
class StlNode:
    id: int
    kind: str
    parent: int | None
    children: list = field(default_factory=list)
    lo: float = 0.0
    hi: float = 0.0
    slot: int | None = None
    label: str = ""
    negated: bool = False

    def text(self) -> str:
        if self.kind == "pred":
            return ("!" if self.negated else "") + self.label
        if self.kind in ("and", "or"):
            return {"and": "&", "or": "|"}[self.kind]
        tag = {"always": "G", "eventually": "F", "until_left": "U-left",
               "until_right": "U-right"}[self.kind]
        return f"{tag}[{self.lo:g},{self.hi:g}]"


@dataclass
class StlTree:
    nodes: list
    formula: object

    @property
    def root(self) -> StlNode:
        return self.nodes[0]

    def leaves(self) -> list:
        """Predicate vertices, left to right."""
        out = []

        def rec(n):
            if n.kind == "pred":
                out.append(n)
            for c in n.children:
                rec(self.nodes[c])

        rec(self.root)
        return out

    def ancestors(self, nid: int) -> list:
        """Ancestors of a vertex, root first."""
        out = []
        p = self.nodes[nid].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out[::-1]

    def subtree_leaves(self, nid: int) -> list:
        return [n for n in self.leaves() if nid in self.ancestors(n.id)]

    def to_dot(self) -> str:
        lines = ["digraph stl {"]
        for n in self.nodes:
            lines.append(f'  n{n.id} [label="{n.text()}"];')
        for n in self.nodes:
            for c in n.children:
                lines.append(f"  n{n.id} -> n{c};")
        lines.append("}")
        return "\n".join(lines)


def build_stl_tree(f) -> StlTree:
    """One vertex per node of the until-normalized formula (pre-order ids).

    Eventually vertices get their own slot; the two halves of an until share
    one. Slot ids are assigned in pre-order.
    """
    f = fm.normalize_until(f)
    nodes: list[StlNode] = []
    until_slot: dict[int, int] = {}
    counter = iter(range(1 << 30))

    def rec(g, parent):
        nid = len(nodes)
        n = StlNode(nid, _KIND[type(g)], parent)
        nodes.append(n)
        if isinstance(g, fm.Pred):
            n.label, n.negated = g.label, g.negated
        elif isinstance(g, fm.TEMPORAL):
            n.lo, n.hi = g.lo, g.hi
            if isinstance(g, fm.Eventually):
                n.slot = next(counter)
            elif isinstance(g, (fm.UntilLeft, fm.UntilRight)):
                if g.slot not in until_slot:
                    until_slot[g.slot] = next(counter)
                n.slot = until_slot[g.slot]
        for c in fm.children(g):
            n.children.append(rec(c, nid))
        return nid

    rec(f, None)
    return StlTree(nodes, f)


def _layer(n: StlNode) -> OperatorLayer:
    if n.kind == "always":
        return layer_always(n.lo, n.hi, node=n.id)
    if n.kind == "eventually":
        return layer_eventually(n.lo, n.hi, slot=n.slot, node=n.id)
    left, right, _ = layer_until(n.lo, n.hi, slot=n.slot, node=n.id)
    return left if n.kind == "until_left" else right


def repetition_nodes(t: StlTree) -> set:
    """Always / until-left vertices whose inner fragments repeat.

    Such a vertex repeats when every leaf below it has a parameterized
    temporal vertex between them. A mix of repeating and non-repeating leaves
    under one vertex is not supported.
    """
    out = set()
    for n in t.nodes:
        if n.kind not in ("always", "until_left"):
            continue
        flags = []
        for leaf in t.subtree_leaves(n.id):
            path = t.ancestors(leaf.id)
            below = path[path.index(n.id) + 1:]
            flags.append(any(t.nodes[b].slot is not None for b in below))
        if all(flags) and flags:
            out.add(n.id)
        elif any(flags):
            raise NotImplementedError(
                f"vertex {n.text()} mixes repeating and non-repeating sub-fragments")
    return out


# --- logic tree --------------------------------------------------------------


@dataclass
class Leaf:
    index: int  # 0-based, left to right
    label: str
    negated: bool
    layers: list
    stl_id: int

    def make_operator(self) -> NestedOperator:
        return NestedOperator(list(self.layers), label=self.label)


@dataclass
class LogicNode:
    id: int
    kind: str  # "and" | "or" | "leaf"
    parent: int | None
    children: list = field(default_factory=list)
    leaf: Leaf | None = None
    chain: list = field(default_factory=list)  # temporal stl ids between this and its logic parent
    depth: int = 0


@dataclass
class LogicTree:
    nodes: list
    leaves: list
    stl: StlTree

    @property
    def root(self) -> LogicNode:
        return self.nodes[0]

    def lca(self, a: int, b: int) -> int:
        pa = set()
        n = a
        while n is not None:
            pa.add(n)
            n = self.nodes[n].parent
        n = b
        while n not in pa:
            n = self.nodes[n].parent
        return n

    def leaf_node(self, k: int) -> LogicNode:
        return next(n for n in self.nodes if n.leaf is not None and n.leaf.index == k)

    def to_dot(self) -> str:
        lines = ["digraph logic {"]
        for n in self.nodes:
            lab = (f"V{n.leaf.index + 1}:{n.leaf.label}" if n.kind == "leaf"
                   else {"and": "&", "or": "|"}[n.kind])
            lines.append(f'  n{n.id} [label="{lab}"];')
        for n in self.nodes:
            for c in n.children:
                lines.append(f"  n{n.id} -> n{c};")
        lines.append("}")
        return "\n".join(lines)


def build_logic_tree(t: StlTree) -> LogicTree:
    nodes: list[LogicNode] = []
    leaves: list[Leaf] = []

    def rec(sid, parent, chain, layers, depth):
        n = t.nodes[sid]
        if n.kind in TEMPORAL_KINDS:
            return rec(n.children[0], parent, chain + [sid], layers + [_layer(n)], depth)
        lid = len(nodes)
        ln = LogicNode(lid, "leaf" if n.kind == "pred" else n.kind, parent, chain=chain,
                       depth=depth)
        nodes.append(ln)
        if n.kind == "pred":
            if not layers:
                # a bare predicate is checked at the start time only
                layers = [layer_always(0.0, 0.0)]
            ln.leaf = Leaf(len(leaves), n.label, n.negated, layers, sid)
            leaves.append(ln.leaf)
        else:
            for c in n.children:
                ln.children.append(rec(c, lid, [], layers, depth + 1))
        return lid

    rec(t.root.id, None, [], [], 0)
    repetition_nodes(t)  # reject unsupported shapes early
    # and/or are flattened with >= 2 children, so the tree is already proper
    return LogicTree(nodes, leaves, t)


# --- sigma -------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaExpr:
    op: str  # "min" | "max" | "leaf"
    children: tuple = ()
    leaf: int | None = None

    def evaluate(self, values) -> float:
        if self.op == "leaf":
            return values[self.leaf]
        vals = [c.evaluate(values) for c in self.children]
        return min(vals) if self.op == "min" else max(vals)

    def evaluate_array(self, values) -> np.ndarray:
        """Elementwise version; values[k] is an array per leaf."""
        if self.op == "leaf":
            return np.asarray(values[self.leaf], dtype=float)
        vals = [c.evaluate_array(values) for c in self.children]
        return (np.minimum if self.op == "min" else np.maximum).reduce(vals)

    def leaves(self) -> list:
        if self.op == "leaf":
            return [self.leaf]
        return [k for c in self.children for k in c.leaves()]

    def __str__(self):
        if self.op == "leaf":
            return f"V{self.leaf + 1}"
        return f"{self.op}{{{', '.join(str(c) for c in self.children)}}}"


def fold_sigma(lt: LogicTree, steps: list | None = None) -> SigmaExpr:
    """Group the leaves whose lowest common ancestor is deepest, replace that
    ancestor by min/max over them, repeat until only the root is left.

    If `steps` is a list, each pass appends its groups (tuples of leaf ids in
    the original numbering, or of already folded groups' first leaf).
    """
    expr = {n.id: SigmaExpr("leaf", leaf=n.leaf.index) for n in lt.nodes if n.kind == "leaf"}
    current = set(expr)
    while lt.root.id not in current:
        ready = [n for n in lt.nodes if n.kind != "leaf" and n.id not in current
                 and all(c in current for c in n.children)]
        deepest = max(n.depth for n in ready)
        groups = sorted((n for n in ready if n.depth == deepest),
                        key=lambda n: min(expr[c].leaves()[0] for c in n.children))
        if steps is not None:
            steps.append([tuple(sorted(k for c in n.children for k in expr[c].leaves()))
                          for n in groups])
        for n in groups:
            expr[n.id] = SigmaExpr("min" if n.kind == "and" else "max",
                                   tuple(expr[c] for c in n.children))
            current -= set(n.children)
            current.add(n.id)
    return expr[lt.root.id]


# --- parameter layout -----------------------------------------------------------


@dataclass
class ParamLayout:
    stacked: list  # (leaf index, slot, lo, hi) in stacking order
    A: np.ndarray
    A_hat: np.ndarray
    slots: list  # independent slot ids, first-occurrence order
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n_independent(self) -> int:
        return len(self.slots)

    @property
    def box(self) -> ParamBox:
        return ParamBox(tuple((s, float(l), float(u)) for s, l, u in zip(self.slots, self.lb, self.ub)))

    def index(self, slot: int) -> int:
        return self.slots.index(slot)

    def expand(self, tau_hat) -> np.ndarray:
        return self.A_hat @ np.asarray(tau_hat, dtype=float)

    def assignment(self, tau_hat) -> dict:
        return {s: float(v) for s, v in zip(self.slots, tau_hat)}

    def check(self, tau_hat, tol: float = 0.0) -> None:
        th = np.asarray(tau_hat, dtype=float)
        if np.any(th < self.lb - tol) or np.any(th > self.ub + tol):
            raise ValueError(f"tau_hat {th} outside the parameter box")


class InconsistentBounds(ValueError):
    pass


def build_param_layout(lt: LogicTree) -> ParamLayout:
    stacked = []
    for leaf in lt.leaves:
        for L in leaf.layers:
            for s, lo, hi in L.theta.bounds:
                stacked.append((leaf.index, s, lo, hi))
    n = len(stacked)
    A = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            A[i, j] = int(stacked[i][1] == stacked[j][1])
    slots, bounds = [], {}
    for _, s, lo, hi in stacked:
        if s not in bounds:
            slots.append(s)
            bounds[s] = (lo, hi)
        elif bounds[s] != (lo, hi):
            raise InconsistentBounds(f"tied slot {s} has bounds {bounds[s]} and {(lo, hi)}")
    A_hat = np.zeros((n, len(slots)), dtype=int)
    for i, (_, s, _, _) in enumerate(stacked):
        A_hat[i, slots.index(s)] = 1
    lb = np.array([bounds[s][0] for s in slots], dtype=float)
    ub = np.array([bounds[s][1] for s in slots], dtype=float)
    return ParamLayout(stacked, A, A_hat, slots, lb, ub)


def value_horizon(lt: LogicTree, slack: float = 5.0, step: float = 5.0) -> float:
    """Largest look-ahead any operator can ask of V, plus slack, rounded up."""
    lead = 0.0
    for leaf in lt.leaves:
        up = {s: hi for L in leaf.layers for s, _, hi in L.theta.bounds}
        lead = max(lead, sum(L.alpha(up) for L in leaf.layers))
    return step * math.ceil((lead + slack) / step)


def sigma_eval(s: SigmaExpr, layout: ParamLayout, operators, value_functions, x: float,
               t: float, tau_hat) -> float:
    """Pointwise sigma; complete operators count as +inf."""
    layout.check(tau_hat, tol=1e-9)
    tau = layout.assignment(tau_hat)
    vals = []
    for k, op in enumerate(operators):
        if op.complete:
            vals.append(math.inf)
        else:
            vals.append(operator_value(op, value_functions[k], x, t, tau))
    return s.evaluate(vals)
