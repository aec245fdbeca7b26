"""Run-time bookkeeping for all leaf operators of one formula.

Each leaf closes its window when time reaches beta''. Repeating vertices
(always over a parameterized fragment) group the leaves below them into
instances: an instance completes when its logic subtree is discharged, and the
next instance is anchored at that completion time as long as it does not pass
the vertex's deadline. Starting a new instance re-arms every slot below the
vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operator import WindowElapsed
from .taskgraph import LogicTree, ParamLayout, fold_sigma, repetition_nodes

PENDING, SUCCESS, FAILED = "pending", "success", "failed"


class SatisfactionViolation(RuntimeError):
    """A closed window failed its plateau check and the formula cannot recover."""


@dataclass
class LeafTerm:
    """Value and partial derivatives of one live leaf operator."""

    index: int
    value: float
    d_t: float
    d_x: float
    d_tau: np.ndarray
    plateau: bool


@dataclass
class Repetition:
    node: int
    j: int
    end: float
    leaves: list  # labels of leaves discharged in this instance
    branches: dict  # or-vertex id -> labels of the branch that resolved it


@dataclass
class Schedule:
    lt: LogicTree
    layout: ParamLayout
    value_functions: list  # per leaf
    dt: float
    eps_sat: float = 0.05
    ops: list = field(init=False)
    status: list = field(init=False)
    finish: list = field(init=False)
    plateau_min: list = field(init=False)
    run: dict = field(init=False)
    node_status: dict = field(init=False)
    node_finish: dict = field(init=False)
    repetitions: list = field(init=False)
    violations: list = field(init=False)

    def __post_init__(self):
        self._or_choice = {}  # or-vertex -> child that resolved it
        self._run_end = {}
        self.ops = [leaf.make_operator() for leaf in self.lt.leaves]
        self.sigma = fold_sigma(self.lt)
        self.rep_nodes = repetition_nodes(self.lt.stl)
        n = len(self.ops)
        self.status = [PENDING] * n
        self.finish = [math.nan] * n
        self.plateau_min = [math.inf] * n
        self.entered = [False] * n
        self.run = {r: PENDING for r in self.rep_nodes}
        self.node_status = {}
        self.node_finish = {}
        self.repetitions = []
        self.violations = []
        # leaves below each repeating vertex, and that vertex's layer index per leaf
        self.rep_leaves = {r: [] for r in self.rep_nodes}
        for leaf in self.lt.leaves:
            for i, L in enumerate(leaf.layers):
                if L.node in self.rep_nodes:
                    self.rep_leaves[L.node].append((leaf.index, i))
        self._refresh()

    # -- queries ----------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.node_status[self.lt.root.id] == SUCCESS

    @property
    def failed(self) -> bool:
        return self.node_status[self.lt.root.id] == FAILED

    def counters(self) -> dict:
        """Current instance index per repeating vertex."""
        out = {}
        for r, members in self.rep_leaves.items():
            k, i = members[0]
            out[r] = self.ops[k].counters[i]
        return out

    def leaf_override(self) -> list:
        """+inf / -inf for leaves under a resolved vertex (topmost wins), else None."""
        out = [None] * len(self.ops)

        def rec(nid, forced):
            n = self.lt.nodes[nid]
            st = self.node_status[nid]
            if forced is None and st != PENDING:
                forced = math.inf if st == SUCCESS else -math.inf
            if n.kind == "leaf":
                out[n.leaf.index] = forced
            for c in n.children:
                rec(c, forced)

        rec(self.lt.root.id, None)
        return out

    def windows(self, tau) -> list:
        out = []
        for op in self.ops:
            out.append((math.nan, math.nan) if op.complete else op.window_values(tau))
        return out

    def evaluate(self, x: float, t: float, tau_hat):
        """sigma, per-leaf values, and terms of the live leaves."""
        tau = self.layout.assignment(tau_hat)
        forced = self.leaf_override()
        values, terms = [], []
        L = self.layout.n_independent
        for k, op in enumerate(self.ops):
            if forced[k] is not None:
                values.append(forced[k])
                continue
            V = self.value_functions[k]
            a_wf, b_wf = op.window()
            a, b = a_wf(tau), b_wf(tau)
            if t > b + 1e-9:
                raise WindowElapsed(f"leaf {k} queried at t={t:g} past its window end {b:g}")
            d_tau = np.zeros(L)
            if t <= a:
                val = V.eval(x, t - a)
                d_t, d_x = V.gradients(x, t - a)
                for s, c in zip(a_wf.slots, a_wf.a1):
                    d_tau[self.layout.index(s)] -= c * d_t
                terms.append(LeafTerm(k, val, d_t, d_x, d_tau, False))
            else:
                val = float(V.h(x))
                terms.append(LeafTerm(k, val, 0.0, float(V.dh(x)), d_tau, True))
            values.append(val)
        return self.sigma.evaluate(values), values, terms

    # -- events -------------------------------------------------------------------

    def step(self, x: float, t: float, tau_hat) -> set:
        """Process window closings at time t. Returns slots to re-arm."""
        tau = self.layout.assignment(tau_hat)
        forced = self.leaf_override()
        for k, op in enumerate(self.ops):
            if self.status[k] != PENDING or op.complete or forced[k] is not None:
                continue
            a, b = op.window_values(tau)
            h = float(self.value_functions[k].h(x))
            if t > a:
                self.plateau_min[k] = min(self.plateau_min[k], h)
                if not self.entered[k]:
                    # the window start is now in the past: commit the slots it uses
                    self.entered[k] = True
                    start = {s: tau[s] for s in op.window()[0].slots}
                    for other in self.ops:
                        other.freeze(start)
            # close when the next step would pass beta''
            if t + self.dt > b + 1e-9 or t >= b - 1e-9:
                self.plateau_min[k] = min(self.plateau_min[k], h)
                op.record(tau)
                frozen = {s: tau[s] for s in op.live_slots()}
                for other in self.ops:
                    other.freeze(frozen)
                self.finish[k] = b
                if self.plateau_min[k] >= -self.eps_sat:
                    self.status[k] = SUCCESS
                else:
                    self.status[k] = FAILED
                    self.violations.append((t, k, self.plateau_min[k]))
        remint: set = set()
        self._refresh(tau, remint)
        if self.failed:
            t_, k, m = self.violations[-1]
            raise SatisfactionViolation(
                f"leaf {k} ({self.lt.leaves[k].label}) closed at t={t_:g} with plateau "
                f"minimum {m:.4g} < -{self.eps_sat:g}; formula can no longer hold")
        return remint

    def _refresh(self, tau=None, remint=None):
        self.node_status, self.node_finish = {}, {}
        self._visit(self.lt.root.id, tau, remint)

    def _visit(self, nid, tau, remint):
        n = self.lt.nodes[nid]
        if n.kind == "leaf":
            st, e = self.status[n.leaf.index], self.finish[n.leaf.index]
        else:
            kids = [self._visit(c, tau, remint) for c in n.children]
            st, e = _combine(n.kind, kids)
            if n.kind == "or" and st == SUCCESS:
                self._or_choice[nid] = [c for c, (s, f) in zip(n.children, kids)
                                        if s == SUCCESS and f == e][0]
        for r in reversed([c for c in n.chain if c in self.rep_nodes]):
            if self.run[r] != PENDING:
                st, e = self.run[r], self._run_end.get(r, math.nan)
                continue
            if st == SUCCESS and tau is not None:
                self._log_instance(r, nid, e)
                k0, i0 = self.rep_leaves[r][0]
                if e <= self.ops[k0].deadline(i0)(tau) + 1e-9:
                    self._restart(r, e, remint)
                    st, e = PENDING, math.nan
                else:
                    self.run[r] = SUCCESS
                    self._run_end[r] = e
            elif st == FAILED:
                self.run[r] = FAILED
        self.node_status[nid], self.node_finish[nid] = st, e
        return st, e

    def _restart(self, r, anchor, remint):
        slots = set()
        for k, i in self.rep_leaves[r]:
            slots |= self.ops[k].begin_instance(i, anchor)
            self.status[k] = PENDING
            self.finish[k] = math.nan
            self.plateau_min[k] = math.inf
            self.entered[k] = False
        for op in self.ops:
            op.unfreeze(slots)
        for q in self.rep_nodes:
            if q != r and {k for k, _ in self.rep_leaves[q]} <= {k for k, _ in self.rep_leaves[r]}:
                self.run[q] = PENDING
        remint |= slots

    def _log_instance(self, r, nid, end):
        members = [k for k, _ in self.rep_leaves[r]]
        k0, i0 = self.rep_leaves[r][0]
        labels = [self.lt.leaves[k].label for k in members if self.status[k] == SUCCESS]
        branches = {}
        for o, child in list(self._or_choice.items()):
            sub = self._leaves_under(child)
            if set(sub) <= set(members):
                branches[o] = [self.lt.leaves[k].label for k in sub]
                del self._or_choice[o]
        self.repetitions.append(Repetition(r, self.ops[k0].counters[i0], end, labels, branches))

    def _leaves_under(self, nid) -> list:
        n = self.lt.nodes[nid]
        if n.kind == "leaf":
            return [n.leaf.index]
        return [k for c in n.children for k in self._leaves_under(c)]


def _combine(kind, kids):
    states = [s for s, _ in kids]
    if kind == "and":
        if FAILED in states:
            return FAILED, math.nan
        if all(s == SUCCESS for s in states):
            return SUCCESS, max(e for _, e in kids)
        return PENDING, math.nan
    if any(s == SUCCESS for s in states):
        return SUCCESS, min(e for s, e in kids if s == SUCCESS)
    if all(s == FAILED for s in states):
        return FAILED, math.nan
    return PENDING, math.nan


def sigma_along_trace(lt: LogicTree, layout: ParamLayout, value_functions, times, xs,
                      tau_hat, eps_sat: float = 0.0) -> np.ndarray:
    """sigma at every sample of a recorded trace, for a formula without repetition.

    tau_hat is one vector (held constant) or one row per sample. A leaf's
    window closes after the last sample not later than beta''; from then on it
    contributes +inf if h stayed >= -eps_sat on its plateau samples (the
    closing sample included), else -inf.
    """
    if repetition_nodes(lt.stl):
        raise ValueError("formula has repeating vertices; replay needs the run-time schedule")
    times = np.asarray(times, dtype=float)
    xs = np.asarray(xs, dtype=float)
    th = np.asarray(tau_hat, dtype=float)
    if th.ndim == 1:
        th = np.broadcast_to(th, (len(times), len(th)))

    def wf(w):
        out = np.full(len(times), w.a0)
        for s, c in zip(w.slots, w.a1):
            out = out + c * th[:, layout.index(s)]
        return out

    vals = []
    for k, leaf in enumerate(lt.leaves):
        a_wf, b_wf = leaf.make_operator().window()
        a, b = wf(a_wf), wf(b_wf)
        V = value_functions[k]
        h = np.asarray(V.h(xs), dtype=float)
        v = np.where(times <= a, V.eval_many(xs, np.minimum(times - a, 0.0)), h)
        after = times > b + 1e-9
        if after.any():
            kc = int(np.argmax(after))
            on = (times > a) & ~after
            if kc > 0:
                on[kc - 1] = True
            m = float(np.min(h[:kc][on[:kc]])) if on[:kc].any() else -math.inf
            v[after] = math.inf if m >= -eps_sat else -math.inf
        vals.append(v)
    return fold_sigma(lt).evaluate_array(vals)
