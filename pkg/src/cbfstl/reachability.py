"""Backward-reachability value functions for scalar dynamics.

V(x, t) = sup_u max_{s in [t, 0]} h(x(s)) with t <= 0. For a concave band h in
one dimension the sign of dV/dx equals the sign of dh/dx, so the optimal input
is a pointwise maximizer and V is obtained by integrating every grid node along
its optimal characteristic and keeping the running maximum of h.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .formula import BandPredicate

log = logging.getLogger(__name__)

KINDS = ("nonaffine", "affine", "linear")


@dataclass(frozen=True)
class Dynamics1D:
    """nonaffine: xdot = -tanh(x) + a*x*u^3 + b*u
    affine:    xdot = -0.1*tanh(x) + u*(0.5*x + 1)
    linear:    xdot = 0.1*x + u
    """

    kind: str
    u_min: float = -0.5
    u_max: float = 0.5
    a: float = 1.0
    b: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not self.u_min < self.u_max:
            raise ValueError("input bounds need u_min < u_max")

    @property
    def input_affine(self) -> bool:
        return self.kind != "nonaffine"

    def drift(self, x):
        if self.kind == "nonaffine":
            return -np.tanh(x)
        if self.kind == "affine":
            return -0.1 * np.tanh(x)
        return 0.1 * x

    def input_term(self, x, u):
        if self.kind == "nonaffine":
            return self.a * x * u ** 3 + self.b * u
        if self.kind == "affine":
            return u * (0.5 * x + 1.0)
        return u

    def gain(self, x):
        """g(x) in xdot = drift(x) + g(x)*u, input-affine kinds only."""
        if self.kind == "affine":
            return 0.5 * x + 1.0
        if self.kind == "linear":
            return 1.0 + 0.0 * x
        raise ValueError("non-affine dynamics have no input gain")

    def f(self, x, u):
        return self.drift(x) + self.input_term(x, u)

    def candidates(self, x: float) -> list[float]:
        """Inputs that can maximize g*input_term(x, u) over [u_min, u_max]."""
        out = [self.u_min, self.u_max]
        if self.kind == "nonaffine" and x != 0.0:
            q = -self.b / (3.0 * self.a * x)
            if q > 0:
                r = math.sqrt(q)
                out += [v for v in (-r, r) if self.u_min <= v <= self.u_max]
        return out


def optimal_input(dyn: Dynamics1D, x: float, grad_sign: float) -> float:
    """Pointwise maximizer of grad_sign * input_term(x, u).

    With grad_sign == 0 the candidate with the smallest |f| is returned.
    """
    cands = dyn.candidates(x)
    if grad_sign == 0:
        return min(cands, key=lambda u: abs(dyn.f(x, u)))
    s = 1.0 if grad_sign > 0 else -1.0
    return max(cands, key=lambda u: s * dyn.input_term(x, u))


def optimal_input_grid(dyn: Dynamics1D, x: np.ndarray, grad_sign: np.ndarray) -> np.ndarray:
    """Vectorized optimal_input."""
    x = np.asarray(x, dtype=float)
    s = np.sign(grad_sign)
    cands = [np.full_like(x, dyn.u_min), np.full_like(x, dyn.u_max)]
    if dyn.kind == "nonaffine":
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            q = -dyn.b / (3.0 * dyn.a * x)
            r = np.sqrt(np.where(q > 0, q, np.nan))
        for v in (-r, r):
            ok = np.isfinite(v) & (v >= dyn.u_min) & (v <= dyn.u_max)
            cands.append(np.where(ok, v, np.nan))
    C = np.stack(cands)
    score = s * dyn.input_term(x, C)
    score = np.where(np.isnan(C), -np.inf, score)
    best = C[np.argmax(score, axis=0), np.arange(x.size)]
    hold = s == 0
    if np.any(hold):
        speed = np.abs(dyn.f(x, C))
        speed = np.where(np.isnan(C), np.inf, speed)
        best = np.where(hold, C[np.argmin(speed, axis=0), np.arange(x.size)], best)
    return best


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    t_horizon: float
    n_x: int = 401
    n_t: int | None = None
    dt_int: float = 0.01
    margin: float = 0.5
    max_halvings: int = 10

    def __post_init__(self):
        if not self.t_horizon > 0:
            raise ValueError("t_horizon must be positive")
        if self.n_t is None:
            object.__setattr__(self, "n_t", int(round(self.t_horizon / 0.05)) + 1)
        if self.n_x < 2 or self.n_t < 2 or not self.x_max > self.x_min:
            raise ValueError("grid needs n_x, n_t >= 2 and x_max > x_min")


class NonFiniteState(FloatingPointError):
    pass


@dataclass(eq=False)
class ValueFunction:
    """Gridded V(x, t). Column j of `values` is t_grid[j]; the last column is t = 0."""

    x_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    predicate: BandPredicate
    negated: bool = False
    step_limited: list = field(default_factory=list)

    def __post_init__(self):
        self._x0 = float(self.x_grid[0])
        self._dx = float(self.x_grid[1] - self.x_grid[0])
        self._t0 = float(self.t_grid[0])
        self._dt = float(self.t_grid[1] - self.t_grid[0])
        self._nx, self._nt = self.values.shape
        self.dV_dx = np.gradient(self.values, self._dx, axis=0)
        self.dV_dt = np.gradient(self.values, self._dt, axis=1)

    @property
    def t_horizon(self) -> float:
        return -self._t0

    @property
    def tol_mono(self) -> float:
        return 1e-6 * self.predicate.peak

    def h(self, x):
        return self.predicate.h(x, self.negated)

    def dh(self, x):
        return self.predicate.dh(x, self.negated)

    def _cell(self, x: float, t: float):
        if t > 1e-9:
            raise ValueError(f"value function queried at t={t:g} > 0")
        fx = (x - self._x0) / self._dx
        fx = min(max(fx, 0.0), self._nx - 1.0)
        ft = (t - self._t0) / self._dt
        ft = min(max(ft, 0.0), self._nt - 1.0)
        i = min(int(fx), self._nx - 2)
        j = min(int(ft), self._nt - 2)
        return i, j, fx - i, ft - j

    @staticmethod
    def _bilinear(a, i, j, wx, wt):
        return ((1 - wx) * ((1 - wt) * a[i, j] + wt * a[i, j + 1])
                + wx * ((1 - wt) * a[i + 1, j] + wt * a[i + 1, j + 1]))

    def eval(self, x: float, t: float) -> float:
        return float(self._bilinear(self.values, *self._cell(x, t)))

    def gradients(self, x: float, t: float) -> tuple[float, float]:
        c = self._cell(x, t)
        return float(self._bilinear(self.dV_dt, *c)), float(self._bilinear(self.dV_dx, *c))

    def eval_many(self, x, t) -> np.ndarray:
        """Vectorized eval over broadcast arrays, same clamping as eval."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        if np.any(t > 1e-9):
            raise ValueError("value function queried at t > 0")
        fx = np.clip((x - self._x0) / self._dx, 0.0, self._nx - 1.0)
        ft = np.clip((t - self._t0) / self._dt, 0.0, self._nt - 1.0)
        i = np.minimum(fx.astype(int), self._nx - 2)
        j = np.minimum(ft.astype(int), self._nt - 2)
        return self._bilinear(self.values, i, j, fx - i, ft - j)


def eval_value(V: ValueFunction, x: float, t: float) -> float:
    return V.eval(x, t)


def value_gradients(V: ValueFunction, x: float, t: float) -> tuple[float, float]:
    """(dV/dt, dV/dx) from grid finite differences."""
    return V.gradients(x, t)


def solve_value_function(dyn: Dynamics1D, p: BandPredicate, spec: GridSpec,
                         negated: bool = False) -> ValueFunction:
    xs = np.linspace(spec.x_min, spec.x_max, spec.n_x)
    ts = np.linspace(-spec.t_horizon, 0.0, spec.n_t)
    lo, hi = spec.x_min - spec.margin, spec.x_max + spec.margin
    dx_bound = 0.5 * (xs[1] - xs[0])
    dt_out = spec.t_horizon / (spec.n_t - 1)

    state = xs.copy()
    best = p.h(xs, negated)
    values = np.empty((spec.n_x, spec.n_t))
    values[:, -1] = best
    limited = set()

    for k in range(1, spec.n_t):
        remaining = dt_out
        while remaining > 1e-12:
            h_step = min(spec.dt_int, remaining)
            u = optimal_input_grid(dyn, state, p.dh(state, negated))
            vel = dyn.f(state, u)
            for _ in range(spec.max_halvings):
                if np.max(np.abs(vel)) * h_step <= dx_bound:
                    break
                h_step *= 0.5
            else:
                limited.update(np.nonzero(np.abs(vel) * h_step > dx_bound)[0].tolist())
            state = np.clip(state + h_step * vel, lo, hi)
            if not np.all(np.isfinite(state)):
                bad = int(np.nonzero(~np.isfinite(state))[0][0])
                raise NonFiniteState(f"non-finite state from grid node x={xs[bad]:g} "
                                     f"at time-to-go {k * dt_out:g}")
            np.maximum(best, p.h(state, negated), out=best)
            remaining -= h_step
        values[:, spec.n_t - 1 - k] = best

    if limited:
        log.info("%d grid nodes step-limited while solving V for %s", len(limited), p.label)
    return ValueFunction(xs, ts, values, p, negated, sorted(limited))


# --- cache -----------------------------------------------------------------

_CACHE_VERSION = 1


def cache_key(dyn: Dynamics1D, p: BandPredicate, spec: GridSpec, negated: bool = False) -> str:
    blob = json.dumps({"v": _CACHE_VERSION, "dyn": asdict(dyn), "pred": asdict(p),
                       "spec": asdict(spec), "neg": negated}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def solve_cached(dyn, p, spec, negated=False, cache_dir=None) -> ValueFunction:
    if cache_dir is None:
        return solve_value_function(dyn, p, spec, negated)
    path = os.path.join(cache_dir, f"vf-{p.label}-{cache_key(dyn, p, spec, negated)}.npz")
    if os.path.exists(path):
        with np.load(path) as z:
            return ValueFunction(z["x"], z["t"], z["v"], p, negated, z["lim"].tolist())
    V = solve_value_function(dyn, p, spec, negated)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, x=V.x_grid, t=V.t_grid, v=V.values, lim=np.array(V.step_limited, dtype=int))
    os.replace(tmp, path)
    return V
