"""Online controller over the enhanced state (x, tau_hat).

Each step solves

    min  delta (u - u_ref)^2 + (1 - delta) |omega - omega_ref|^2 + W s^2
    s.t. dV_k/dt + k (V_k + |V_k - sigma|) + s >= eps     for every live leaf k
         -(2 tau_i - lb_i - ub_i) omega_i + k_hat sigma_hat_i >= 0
         u in [u_min, u_max], |omega| <= omega_max, s >= 0

where dV_k/dt is linear in (u, omega) for input-affine dynamics. For
non-affine dynamics u is searched over a grid and the rest is a QP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .qp import solve_qp
from .reachability import Dynamics1D
from .schedule import LeafTerm, Schedule, SatisfactionViolation
from .taskgraph import ParamLayout


class ControllerInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class URef:
    """Reference input: zero, const(value) or amplitude * sin(frequency * t)."""

    kind: str = "zero"
    value: float = 0.0
    amplitude: float = 1.0
    frequency: float = 1.0

    def __call__(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "const":
            return self.value
        if self.kind == "sin":
            return self.amplitude * math.sin(self.frequency * t)
        raise ValueError(f"unknown u_ref kind {self.kind!r}")


@dataclass
class ControllerConfig:
    delta: float = 0.7
    k: float = 2.0
    k_hat: float = 2.0
    k_omega: float = 0.2
    dt: float = 0.01
    n_u: int = 41
    slack_weight: float = 1e4
    omega_max: float = 5.0
    eps_strict: float = 1e-9
    slack_max: float = 1e3
    eps_sat: float = 0.05
    max_dx: float = 0.05  # norm-control bound on |dx| per Euler substep
    u_ref: URef = field(default_factory=URef)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class EnhancedState:
    x: float
    tau_hat: np.ndarray
    t: float = 0.0


def barrier_rate(term: LeafTerm, dyn: Dynamics1D, x: float, u: float, omega) -> float:
    return term.d_t + term.d_x * float(dyn.f(x, u)) + float(np.dot(term.d_tau, omega))


def slot_barrier(layout: ParamLayout, tau_hat):
    """sigma_hat_i = -(tau_i - lb_i)(tau_i - ub_i) and its tau-gradient."""
    th = np.asarray(tau_hat, dtype=float)
    return -(th - layout.lb) * (th - layout.ub), -(2 * th - layout.lb - layout.ub)


def constraint_residuals(terms, sigma, layout, tau_hat, dyn, x, u, omega, s,
                         cfg: ControllerConfig, live=None):
    """Leaf rows then slot rows (live slots only); all must be >= 0."""
    rows = [barrier_rate(tm, dyn, x, u, omega) + cfg.k * (tm.value + abs(tm.value - sigma)) + s
            for tm in terms]
    sh, grad = slot_barrier(layout, tau_hat)
    live = np.ones(layout.n_independent, bool) if live is None else live
    rows += list((grad * np.asarray(omega) + cfg.k_hat * sh)[live])
    return np.array(rows)


def omega_bounds(layout, tau_hat, live, cfg: ControllerConfig):
    """Per-slot omega interval from the slot barrier and the omega box."""
    sh, grad = slot_barrier(layout, tau_hat)
    lo = np.full(layout.n_independent, -cfg.omega_max)
    hi = np.full(layout.n_independent, cfg.omega_max)
    for i in range(layout.n_independent):
        if not live[i]:
            lo[i] = hi[i] = 0.0
            continue
        lim = cfg.k_hat * sh[i]
        if grad[i] > 1e-12:
            lo[i] = max(lo[i], -lim / grad[i])
        elif grad[i] < -1e-12:
            hi[i] = min(hi[i], -lim / grad[i])
        if lo[i] > hi[i]:  # outside the box: push back in as hard as allowed
            lo[i] = hi[i] = float(np.clip(-lim / grad[i], -cfg.omega_max, cfg.omega_max))
    return lo, hi


def controller_step(z: EnhancedState, terms, sigma: float, layout: ParamLayout,
                    dyn: Dynamics1D, cfg: ControllerConfig, live):
    """Returns (u, omega, slack)."""
    u_ref = cfg.u_ref(z.t)
    L = layout.n_independent
    om_ref = np.where(live, -cfg.k_omega * z.tau_hat, 0.0)
    om_lo, om_hi = omega_bounds(layout, z.tau_hat, live, cfg)
    om0 = np.clip(om_ref, om_lo, om_hi)
    u0 = min(max(u_ref, dyn.u_min), dyn.u_max)
    if not terms:
        return u0, om0, 0.0

    # leaf rows: a_u * u + D omega + s >= b  (a_u only for input-affine dynamics)
    D = np.array([tm.d_tau for tm in terms]).reshape(len(terms), L)
    kap = np.array([cfg.k * (tm.value + abs(tm.value - sigma)) for tm in terms])
    dt_ = np.array([tm.d_t for tm in terms])
    dx_ = np.array([tm.d_x for tm in terms])
    base = cfg.eps_strict - dt_ - kap

    if dyn.input_affine:
        a_u = dx_ * float(dyn.gain(z.x))
        b = base - dx_ * float(dyn.drift(z.x))
        G = np.hstack([a_u[:, None], D, np.ones((len(terms), 1))])
        w = np.concatenate([[cfg.delta], np.full(L, 1 - cfg.delta), [cfg.slack_weight]])
        r = np.concatenate([[u_ref], om_ref, [0.0]])
        lb = np.concatenate([[dyn.u_min], om_lo, [0.0]])
        ub = np.concatenate([[dyn.u_max], om_hi, [np.inf]])
        sol = solve_qp(w, r, G, b, lb, ub)
        u, om, s = float(sol[0]), sol[1:1 + L], float(sol[-1])
    else:
        u, om, s = _grid_search(z, dyn, cfg, D, base, dx_, u_ref, u0, om_ref, om0, om_lo, om_hi)
    if s > cfg.slack_max:
        raise ControllerInfeasible(f"t={z.t:g}: slack {s:.3g} exceeds bound {cfg.slack_max:g}")
    return u, np.where(live, om, 0.0), s


def _grid_search(z, dyn, cfg, D, base, dx_, u_ref, u0, om_ref, om0, om_lo, om_hi):
    L = D.shape[1]
    us = np.unique(np.append(np.linspace(dyn.u_min, dyn.u_max, cfg.n_u), u0))
    f = dyn.f(z.x, us)  # (n_cand,)
    B = base[None, :] - dx_[None, :] * f[:, None]  # rhs per candidate and leaf
    cost_u = cfg.delta * (us - u_ref) ** 2
    om_cost0 = (1 - cfg.delta) * float(np.sum((om0 - om_ref) ** 2))
    ok = np.all(D @ om0 >= B - 1e-15, axis=1)
    best = (math.inf, None, None, None)
    if np.any(ok):
        i = int(np.argmin(np.where(ok, cost_u, np.inf)))
        best = (cost_u[i] + om_cost0, us[i], om0, 0.0)
    G = np.hstack([D, np.ones((D.shape[0], 1))])
    w = np.concatenate([np.full(L, 1 - cfg.delta), [cfg.slack_weight]])
    r = np.concatenate([om_ref, [0.0]])
    lb = np.concatenate([om_lo, [0.0]])
    ub = np.concatenate([om_hi, [np.inf]])
    for i in np.argsort(cost_u):
        if cost_u[i] >= best[0]:
            break
        if ok[i]:
            continue
        sol = solve_qp(w, r, G, B[i], lb, ub)
        c = cost_u[i] + float(np.sum(w * (sol - r) ** 2))
        if c < best[0]:
            best = (c, us[i], sol[:L], float(sol[-1]))
    return float(best[1]), np.asarray(best[2]), float(best[3])


# --- simulation ------------------------------------------------------------------


@dataclass
class Trace:
    leaf_labels: list
    slot_names: list
    rep_nodes: list
    rows: list = field(default_factory=list)
    repetitions: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    step_limited: int = 0

    def columns(self) -> list:
        L = len(self.slot_names)
        n = len(self.leaf_labels)
        return (["t", "x"] + [f"tau_hat_{i + 1}" for i in range(L)] + ["u"]
                + [f"omega_{i + 1}" for i in range(L)] + ["sigma", "slack"]
                + [f"V_{k + 1}" for k in range(n)]
                + [f"{w}_{k + 1}" for k in range(n) for w in ("alpha", "beta")]
                + [f"count_{r}" for r in self.rep_nodes])

    def array(self, name: str) -> np.ndarray:
        i = self.columns().index(name)
        return np.array([row[i] for row in self.rows], dtype=float)

    @property
    def t(self):
        return self.array("t")

    @property
    def x(self):
        return self.array("x")

    def tau_hat(self) -> np.ndarray:
        return np.array([self.array(f"tau_hat_{i + 1}") for i in range(len(self.slot_names))]).T

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def summary(self) -> dict:
        t, dt = self.t, None
        sig = self.array("sigma")[:-1]
        s = self.array("slack")[:-1]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        finite = np.isfinite(sig)
        return {
            "status": self.status,
            "message": self.message,
            "steps": len(self.rows),
            "final_time": float(t[-1]),
            "repetitions": [{"node": r.node, "j": r.j, "end": round(r.end, 9),
                             "leaves": r.leaves,
                             "branches": {str(k): v for k, v in r.branches.items()}}
                            for r in self.repetitions],
            "min_sigma": float(np.min(sig[finite])) if finite.any() else math.inf,
            "integrated_sigma": float(np.sum(np.abs(sig[finite])) * dt),
            "integrated_slack": float(np.sum(s[np.isfinite(s)]) * dt),
            "max_slack": float(np.nanmax(s)) if len(s) else 0.0,
            "slack_active_steps": int(np.sum(s > 1e-9)),
            "step_limited_steps": self.step_limited,
        }


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(round(v, 12))


def simulate(schedule: Schedule, dyn: Dynamics1D, cfg: ControllerConfig, x0: float,
             tau0, horizon: float, abort_on_violation: bool = True) -> Trace:
    layout = schedule.layout
    tau0 = np.asarray(tau0, dtype=float)
    layout.check(tau0)
    trace = Trace([leaf.label for leaf in schedule.lt.leaves],
                  list(layout.slots), sorted(schedule.rep_nodes))
    z = EnhancedState(float(x0), tau0.copy(), 0.0)
    n_steps = int(round(horizon / cfg.dt))
    slot_pos = {s: i for i, s in enumerate(layout.slots)}
    frozen = np.zeros(layout.n_independent, bool)

    def frozen_mask():
        frozen[:] = False
        for op, st in zip(schedule.ops, schedule.status):
            for s in op.frozen:
                frozen[slot_pos[s]] = True
        return ~frozen

    def row(u, om, sigma, s, values):
        wins = schedule.windows(layout.assignment(z.tau_hat))
        cnt = schedule.counters()
        return ([z.t, z.x] + list(z.tau_hat) + [u] + list(om) + [sigma, s] + list(values)
                + [v for w in wins for v in w] + [cnt[r] for r in trace.rep_nodes])

    L = layout.n_independent
    try:
        for n in range(n_steps):
            live = frozen_mask()
            if schedule.done:
                sigma, values, terms = math.inf, [math.inf] * len(schedule.ops), []
            else:
                sigma, values, terms = schedule.evaluate(z.x, z.t, z.tau_hat)
            u, om, s = controller_step(z, terms, sigma, layout, dyn, cfg, live)
            trace.rows.append(row(u, om, sigma, s, values))
            # Euler step with norm control
            x, rem = z.x, cfg.dt
            while rem > 1e-15:
                h = rem
                v = float(dyn.f(x, u))
                while abs(v) * h > cfg.max_dx and h > cfg.dt / 1024:
                    h *= 0.5
                if h < rem:
                    trace.step_limited += 1
                x += v * h
                rem -= h
            z = EnhancedState(x, z.tau_hat + om * cfg.dt, (n + 1) * cfg.dt)
            if not schedule.done:
                remint = schedule.step(z.x, z.t, z.tau_hat)
                for s_id in remint:
                    z.tau_hat[slot_pos[s_id]] = tau0[slot_pos[s_id]]
        trace.status = "complete" if schedule.done else "horizon"
    except SatisfactionViolation as exc:
        trace.status, trace.message = "violated", str(exc)
        if abort_on_violation:
            trace.repetitions = list(schedule.repetitions)
            raise SimulationAborted(str(exc), trace) from exc
    except ControllerInfeasible as exc:
        trace.status, trace.message = "infeasible", str(exc)
        trace.repetitions = list(schedule.repetitions)
        raise SimulationAborted(str(exc), trace) from exc
    trace.rows.append(row(math.nan, [math.nan] * L, math.nan, math.nan,
                          [math.nan] * len(schedule.ops)))
    trace.repetitions = list(schedule.repetitions)
    return trace


class SimulationAborted(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace
