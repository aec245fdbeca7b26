"""Scenario configs, built-in presets and the end-to-end pipeline."""

from __future__ import annotations

import copy
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import formula as fm
from .control import ControllerConfig, SimulationAborted, Trace, URef, simulate
from .oracle import EPS_DISC, SampledSignal, robustness, verdict
from .reachability import Dynamics1D, GridSpec, solve_cached
from .schedule import Schedule
from .taskgraph import build_logic_tree, build_param_layout, build_stl_tree, value_horizon


class ConfigError(ValueError):
    pass


PSI1 = "G[0,25](F[3,4](p1 U[1,2] (F[1,2](p2))))"
PSI2 = "F[10,30](G[0,1](p3))"

_NONAFFINE_PREDS = {"p1": {"c": 10, "r": 0.25, "x0": 1.0},
                    "p2": {"c": 10, "r": 0.25, "x0": 1.75},
                    "p3": {"c": 10, "r": 0.2, "x0": 1.5}}
_AFFINE_PREDS = {"p1": {"c": 10, "r": 0.25, "x0": 1.0},
                 "p2": {"c": 10, "r": 0.25, "x0": 0.0},
                 "p3": {"c": 10, "r": 0.2, "x0": -0.75}}


def _preset(name, kind, preds, formula, x0, grid, u_ref=None, **extra):
    cfg = {"name": name,
           "dynamics": {"kind": kind},
           "predicates": copy.deepcopy(preds),
           "formula": formula,
           "initial": {"x": x0, "tau_hat": "upper"},
           "grid": grid,
           "u_ref": u_ref or {"kind": "zero"},
           "controller": {},
           "seed": 0}
    cfg.update(extra)
    return cfg


_NA_GRID = {"x_min": -2.0, "x_max": 3.5}
_AF_GRID = {"x_min": -2.0, "x_max": 2.5}

PRESETS = {
    "nonaffine-case1": _preset("nonaffine-case1", "nonaffine", _NONAFFINE_PREDS, PSI1,
                               0.5, _NA_GRID),
    "nonaffine-case2-plus": _preset(
        "nonaffine-case2-plus", "nonaffine", _NONAFFINE_PREDS,
        "G[0,25](F[3,4](p1 U[1,2] (F[1,2](p2 | G[0,1](p3)))))", 0.5, _NA_GRID,
        {"kind": "const", "value": 1.0}),
    "nonaffine-case2-minus": _preset(
        "nonaffine-case2-minus", "nonaffine", _NONAFFINE_PREDS,
        "G[0,25](F[3,4](p1 U[1,2] (F[1,2](p2 | G[0,1](p3)))))", 0.5, _NA_GRID,
        {"kind": "const", "value": -1.0}),
    "nonaffine-case2-sin": _preset(
        "nonaffine-case2-sin", "nonaffine", _NONAFFINE_PREDS,
        "G[0,25](F[3,4](p1 U[1,2] (F[1,2](p2 | G[0,1](p3)))))", 0.5, _NA_GRID,
        {"kind": "sin", "amplitude": 1.0, "frequency": 0.5}),
    "affine-case1": _preset("affine-case1", "affine", _AFFINE_PREDS,
                            f"({PSI1}) & ({PSI2})", 0.5, _AF_GRID),
    "affine-case2-a": _preset("affine-case2-a", "affine", _AFFINE_PREDS,
                              f"G[0,100](F[1,3](({PSI1}) & ({PSI2})))", 0.5, _AF_GRID),
    "affine-case2-b": _preset("affine-case2-b", "affine", _AFFINE_PREDS,
                              f"G[0,100](F[1,3](({PSI1}) & ({PSI2})))", -1.0, _AF_GRID),
    "linear": _preset("linear", "linear", _AFFINE_PREDS,
                      "(G[0,15](F[3,4](p1 U[1,2] F[1,2](p2)))) & (F[10,30](G[0,1](p3)))",
                      0.0, _AF_GRID),
}
ALIASES = {"nonaffine-case2": "nonaffine-case2-sin", "affine-case2": "affine-case2-a"}
# best robustness reported for the genetic-algorithm baseline on the linear scenario
GA_BASELINE_ROBUSTNESS = -1.89


def preset(name: str) -> dict:
    name = ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def load_config(path: str) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    base = cfg.pop("preset", None)
    if base:
        merged = preset(base)
        for k, v in cfg.items():
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                merged[k].update(v)
            else:
                merged[k] = v
        cfg = merged
    return cfg


# --- scenario --------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    dynamics: Dynamics1D
    predicates: dict
    formula_text: str
    formula: object
    x0: float
    tau0_spec: object
    grid: dict
    controller: ControllerConfig
    horizon: float
    seed: int = 0
    raw: dict = field(default_factory=dict)


_CTRL_KEYS = set(ControllerConfig.__dataclass_fields__) - {"u_ref"}


def scenario_from_config(cfg: dict) -> Scenario:
    try:
        dyn = Dynamics1D(**cfg.get("dynamics", {}))
        preds = {lab: fm.BandPredicate(lab, float(p["c"]), float(p["r"]), float(p["x0"]))
                 for lab, p in cfg["predicates"].items()}
        text = cfg["formula"]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"incomplete scenario config: {exc}") from exc
    f = fm.parse_formula(text, preds)
    ctrl = dict(cfg.get("controller") or {})
    bad = set(ctrl) - _CTRL_KEYS
    if bad:
        raise ConfigError(f"unknown controller keys {sorted(bad)}")
    ur = cfg.get("u_ref") or {"kind": "zero"}
    ctrl["u_ref"] = URef(**ur)
    need = fm.horizon(f)
    horizon = float(cfg.get("horizon") or need + 1.0)
    if horizon < need:
        raise ConfigError(f"horizon {horizon:g} shorter than the formula horizon {need:g}")
    init = cfg.get("initial", {})
    return Scenario(cfg.get("name", "scenario"), dyn, preds, text, f, float(init.get("x", 0.0)),
                    init.get("tau_hat", "midpoint"), dict(cfg.get("grid") or {}),
                    ControllerConfig(**ctrl), horizon, int(cfg.get("seed", 0)), cfg)


@dataclass
class Pipeline:
    scenario: Scenario
    stl: object
    logic: object
    layout: object
    value_functions: dict  # (label, negated) -> ValueFunction
    grid_spec: GridSpec

    def leaf_value_functions(self) -> list:
        return [self.value_functions[(lf.label, lf.negated)] for lf in self.logic.leaves]

    def tau0(self) -> np.ndarray:
        spec = self.scenario.tau0_spec
        lb, ub = self.layout.lb, self.layout.ub
        if spec == "midpoint":
            return 0.5 * (lb + ub)
        if spec == "lower":
            return lb.copy()
        if spec == "upper":
            return ub.copy()
        t0 = np.asarray(spec, dtype=float)
        if t0.shape != lb.shape:
            raise ConfigError(f"tau_hat needs {len(lb)} entries")
        if np.any(t0 < lb) or np.any(t0 > ub):
            raise ConfigError("initial tau_hat outside the parameter box")
        return t0


def build_pipeline(sc: Scenario, vf_cache: str | None = None, jobs: int = 1) -> Pipeline:
    stl = build_stl_tree(sc.formula)
    lt = build_logic_tree(stl)
    layout = build_param_layout(lt)
    g = sc.grid
    spec = GridSpec(float(g.get("x_min", -3.0)), float(g.get("x_max", 3.0)),
                    float(g.get("t_horizon") or value_horizon(lt)),
                    int(g.get("n_x", 401)), g.get("n_t"), float(g.get("dt_int", 0.01)),
                    float(g.get("margin", 0.5)))
    keys = sorted({(lf.label, lf.negated) for lf in lt.leaves})

    def solve(key):
        return solve_cached(sc.dynamics, sc.predicates[key[0]], spec, key[1], vf_cache)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        vfs = dict(zip(keys, pool.map(solve, keys)))
    return Pipeline(sc, stl, lt, layout, vfs, spec)


@dataclass
class RunResult:
    trace: Trace
    robustness: float
    verdict: str
    summary: dict
    pipeline: Pipeline


def run(sc: Scenario, vf_cache=None, jobs: int = 1, pipe: Pipeline | None = None) -> RunResult:
    t_start = time.perf_counter()
    pipe = pipe or build_pipeline(sc, vf_cache, jobs)
    t_vf = time.perf_counter() - t_start
    sched = Schedule(pipe.logic, pipe.layout, pipe.leaf_value_functions(), sc.controller.dt,
                     sc.controller.eps_sat)
    try:
        trace = simulate(sched, sc.dynamics, sc.controller, sc.x0, pipe.tau0(), sc.horizon)
    except SimulationAborted as exc:
        trace = exc.trace
    sig = SampledSignal(trace.t, trace.x)
    try:
        rho = robustness(sc.formula, sig, 0.0, sc.predicates)
    except ValueError:
        rho = float("nan")
    v = verdict(rho, EPS_DISC) if rho == rho else "unsat"
    summary = trace.summary()
    summary.update({"scenario": sc.name, "formula": sc.formula_text, "robustness": rho,
                    "verdict": v, "vf_seconds": round(t_vf, 3),
                    "total_seconds": round(time.perf_counter() - t_start, 3),
                    "leaves": [lf.label for lf in pipe.logic.leaves],
                    "slots": len(pipe.layout.slots)})
    for key in ("vf_seconds", "total_seconds"):
        summary.setdefault("timing", {})[key] = summary.pop(key)
    return RunResult(trace, rho, v, summary, pipe)


# --- single-operator surface (value function before and after G[1,3]) -------------

FIG1 = {"name": "fig1", "dynamics": {"kind": "nonaffine"},
        "predicates": {"p1": dict(_NONAFFINE_PREDS["p1"])},
        "grid": {"x_min": -2.0, "x_max": 3.5, "t_horizon": 5.0},
        "window": [1.0, 3.0]}


def surface_pair(cfg: dict | None = None, vf_cache=None):
    """V_h on its grid, and the always-window operator applied to it.

    Returns (xs, ts, V, ts_op, V_op); the operator surface spans the same
    look-ahead shifted by alpha, followed by the plateau on (alpha, beta].
    """
    from .operator import as_operator, layer_always, operator_value

    cfg = copy.deepcopy(cfg or FIG1)
    dyn = Dynamics1D(**cfg["dynamics"])
    lab, p = next(iter(cfg["predicates"].items()))
    pred = fm.BandPredicate(lab, float(p["c"]), float(p["r"]), float(p["x0"]))
    g = cfg["grid"]
    spec = GridSpec(float(g["x_min"]), float(g["x_max"]), float(g["t_horizon"]),
                    int(g.get("n_x", 401)), g.get("n_t"))
    V = solve_cached(dyn, pred, spec, False, vf_cache)
    a, b = (float(v) for v in cfg["window"])
    op = as_operator(layer_always(a, b))
    step = float(V.t_grid[1] - V.t_grid[0])
    ts_op = np.concatenate([V.t_grid + a, np.arange(a + step, b + 0.5 * step, step)])
    ts_op = ts_op[ts_op <= b + 1e-12]
    V_op = np.array([[operator_value(op, V, x, t) for t in ts_op] for x in V.x_grid])
    return V.x_grid, V.t_grid, V.values, ts_op, V_op
