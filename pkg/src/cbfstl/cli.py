"""Command line entry point.

    cbfstl run --preset nonaffine-case1 --out runs/
    cbfstl solve-vf --preset fig1 --out surfaces/ --vf-cache cache/
    cbfstl robustness --trace runs/linear/trace.csv --preset linear
    cbfstl explain --formula "G[0,25](F[3,4](p1 U[1,2] F[1,2](p2)))"

Exit status of `run` is 0 only when every oracle verdict is sat.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from . import formula as fm
from . import plotting
from .oracle import EPS_DISC, HorizonError, SampledSignal, robustness, verdict
from .scenarios import (ALIASES, FIG1, PRESETS, ConfigError, build_pipeline, load_config,
                        preset, run, scenario_from_config, surface_pair)
from .taskgraph import build_logic_tree, build_param_layout, build_stl_tree, fold_sigma, \
    repetition_nodes, value_horizon

log = logging.getLogger("cbfstl")

EXIT_OK, EXIT_UNSAT, EXIT_ERROR = 0, 1, 2


def _configs(args) -> list:
    """Resolve --preset/--config into a list of raw config dicts."""
    cfgs = []
    for name in args.preset or []:
        if name == "all":
            cfgs += [preset(n) for n in PRESETS]
        else:
            cfgs.append(preset(name))
    for path in args.config or []:
        cfgs.append(load_config(path))
    if not cfgs:
        raise ConfigError("give at least one --preset or --config")
    if args.seed is not None:
        for c in cfgs:
            c["seed"] = args.seed
    return cfgs


def _clean(obj):
    """Plain python types for yaml output."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _run_one(cfg, out, vf_cache, jobs, render):
    sc = scenario_from_config(cfg)
    res = run(sc, vf_cache=vf_cache, jobs=jobs)
    d = os.path.join(out, sc.name)
    os.makedirs(d, exist_ok=True)
    res.trace.write_csv(os.path.join(d, "trace.csv"))
    summary = dict(res.summary)
    summary["seed"] = sc.seed
    summary["tau_hat_bounds"] = {"lb": res.pipeline.layout.lb.tolist(),
                                 "ub": res.pipeline.layout.ub.tolist()}
    with open(os.path.join(d, "summary.yaml"), "w") as fh:
        yaml.safe_dump(_clean(summary), fh, sort_keys=False)
    with open(os.path.join(d, "verdict.txt"), "w") as fh:
        fh.write(f"{res.verdict} {res.robustness!r}\n")
    plotting.emit_run_plots(res, d, render)
    return sc.name, res.verdict, res.robustness, res.summary["status"], d


def cmd_run(args) -> int:
    cfgs = _configs(args)
    if any(c.get("name") == "fig1" for c in cfgs):
        raise ConfigError("fig1 is a value-function preset; use solve-vf")
    render = not args.no_render
    if args.jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_run_one, c, args.out, args.vf_cache, 1, render) for c in cfgs]
            rows = [f.result() for f in futs]
    else:
        rows = [_run_one(c, args.out, args.vf_cache, args.jobs, render) for c in cfgs]
    ok = True
    for name, v, rho, status, d in rows:
        print(f"{name}: verdict={v} robustness={rho:.6g} controller={status} -> {d}")
        ok &= v == "sat"
    return EXIT_OK if ok else EXIT_UNSAT


def cmd_solve_vf(args) -> int:
    names = args.preset or []
    if "fig1" in names:
        xs, ts, V, ts_op, V_op = surface_pair(FIG1, args.vf_cache)
        d = os.path.join(args.out, "fig1")
        os.makedirs(d, exist_ok=True)
        plotting.surface_data(xs, ts, V, os.path.join(d, "value.csv"))
        plotting.surface_data(xs, ts_op, V_op, os.path.join(d, "value_always_1_3.csv"))
        if not args.no_render:
            plotting.render_surfaces([("V_h", xs, ts, V), ("G[1,3] applied to V_h", xs, ts_op, V_op)],
                                     os.path.join(d, "surfaces.png"))
        print(f"fig1: surfaces -> {d}")
        names = [n for n in names if n != "fig1"]
        if not names and not args.config:
            return EXIT_OK
    args.preset = names
    for cfg in _configs(args):
        sc = scenario_from_config(cfg)
        pipe = build_pipeline(sc, args.vf_cache, args.jobs)
        for (lab, neg), V in sorted(pipe.value_functions.items()):
            tag = f"{lab}{'_neg' if neg else ''}"
            d = os.path.join(args.out, sc.name)
            os.makedirs(d, exist_ok=True)
            plotting.surface_data(V.x_grid, V.t_grid, V.values, os.path.join(d, f"value_{tag}.csv"))
            print(f"{sc.name}: {tag} grid {V.values.shape} horizon {V.t_horizon:g}")
    return EXIT_OK


def _read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "t" not in rows[0] or "x" not in rows[0]:
        raise ConfigError(f"{path}: need t and x columns")
    t = np.array([float(r["t"]) for r in rows])
    x = np.array([float(r["x"]) for r in rows])
    keep = np.isfinite(t) & np.isfinite(x)
    return SampledSignal(t[keep], x[keep])


def cmd_robustness(args) -> int:
    cfgs = _configs(args)
    cfg = cfgs[0]
    text = args.formula or cfg["formula"]
    preds = {lab: fm.BandPredicate(lab, float(p["c"]), float(p["r"]), float(p["x0"]))
             for lab, p in cfg["predicates"].items()}
    f = fm.parse_formula(text, preds)
    sig = _read_trace(args.trace)
    rho = robustness(f, sig, args.t, preds)
    v = verdict(rho, args.eps)
    print(f"robustness={rho!r} verdict={v}")
    return EXIT_OK if v == "sat" else EXIT_UNSAT


def cmd_explain(args) -> int:
    if args.formula:
        f = fm.parse_formula(args.formula)
    else:
        cfg = _configs(args)[0]
        f = scenario_from_config(cfg).formula
    stl = build_stl_tree(f)
    lt = build_logic_tree(stl)
    layout = build_param_layout(lt)
    np.set_printoptions(linewidth=160)
    print(f"formula: {fm.to_text(f)}")
    print(f"normalized: {fm.to_text(fm.normalize_until(f))}")
    print("\n# operator tree\n" + stl.to_dot())
    print("\n# logic tree\n" + lt.to_dot())
    print(f"\nsigma: {fold_sigma(lt)}")
    print(f"repeating vertices: {sorted(repetition_nodes(stl))}")
    print(f"value-function horizon: {value_horizon(lt):g}")
    print("\nslots (first occurrence order):")
    for i, s in enumerate(layout.slots):
        print(f"  tau_hat_{i + 1} = t{s} in [{layout.lb[i]:g}, {layout.ub[i]:g}]")
    print("\nA =\n" + str(layout.A))
    print("A_hat =\n" + str(layout.A_hat))
    print("\noperator stacks:")
    for leaf in lt.leaves:
        print(leaf.make_operator().debug_dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbfstl", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        names = sorted(PRESETS) + sorted(ALIASES) + ["all", "fig1"]
        p.add_argument("--preset", action="append", metavar="NAME",
                       help="built-in scenario (repeatable): " + ", ".join(names))
        p.add_argument("--config", action="append", metavar="FILE", help="YAML scenario file")
        p.add_argument("--seed", type=int, default=None)
        if out:
            p.add_argument("--out", default="out", help="output directory")
            p.add_argument("--vf-cache", default=None, metavar="DIR")
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--no-render", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("run", help="simulate scenarios and verify the traces")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("solve-vf", help="solve (and cache) value functions only")
    common(p)
    p.set_defaults(func=cmd_solve_vf)
    p = sub.add_parser("robustness", help="oracle robustness of a trace CSV")
    common(p, out=False)
    p.add_argument("--trace", required=True)
    p.add_argument("--formula", default=None, help="overrides the scenario formula")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=EPS_DISC)
    p.set_defaults(func=cmd_robustness)
    p = sub.add_parser("explain", help="print trees, layout matrices and operator stacks")
    common(p, out=False)
    p.add_argument("--formula", default=None)
    p.set_defaults(func=cmd_explain)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, fm.FormulaSyntaxError, fm.UnknownPredicate, HorizonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
