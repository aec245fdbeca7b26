"""Plot data files and their rendered figures.

Every figure is drawn from the same arrays that go into the CSV next to it, so
the PNG is only a convenience view of the data file.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _write(path, header, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(round(float(v), 12)) for v in row])


def state_data(trace, predicates, path):
    """t, x and the [lo, hi] band of every predicate in the trace."""
    t, x = trace.t, trace.x
    header, cols = ["t", "x"], [t, x]
    for lab in sorted(set(trace.leaf_labels)):
        p = predicates[lab]
        header += [f"{lab}_lo", f"{lab}_hi"]
        cols += [np.full_like(t, p.x0 - p.r), np.full_like(t, p.x0 + p.r)]
    _write(path, header, cols)
    return header, cols


def param_data(trace, layout, path):
    t = trace.t
    th = trace.tau_hat()
    header, cols = ["t"], [t]
    for i in range(layout.n_independent):
        header += [f"tau_hat_{i + 1}", f"lb_{i + 1}", f"ub_{i + 1}"]
        cols += [th[:, i], np.full_like(t, layout.lb[i]), np.full_like(t, layout.ub[i])]
    _write(path, header, cols)
    return header, cols


def render_state(header, cols, path, title=""):
    t, x = cols[0], cols[1]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k in range(2, len(header), 2):
        lab = header[k][:-3]
        ax.axhspan(cols[k][0], cols[k + 1][0], alpha=0.2, color=colors[(k // 2) % len(colors)],
                   label=lab)
    ax.plot(t, x, "k", lw=1.2, label="x")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8, ncol=4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_params(header, cols, path, title=""):
    t = cols[0]
    n = (len(header) - 1) // 3
    fig, axes = plt.subplots(max(n, 1), 1, figsize=(7, 1.6 * max(n, 1) + 0.6), sharex=True,
                             squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        th, lb, ub = cols[1 + 3 * i], cols[2 + 3 * i], cols[3 + 3 * i]
        ax.fill_between(t, lb, ub, color="0.9")
        ax.plot(t, th, lw=1.2)
        ax.set_ylabel(f"tau_hat_{i + 1}")
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def surface_data(xs, ts, Z, path):
    """Long format: one (x, t, value) row per grid node."""
    X, T = np.meshgrid(xs, ts, indexing="ij")
    _write(path, ["x", "t", "value"], [X.ravel(), T.ravel(), Z.ravel()])


def render_surfaces(panels, path):
    """panels: list of (title, xs, ts, Z). Zero level set drawn in black."""
    fig, axes = plt.subplots(len(panels), 1, figsize=(6.5, 3.0 * len(panels)), squeeze=False)
    for ax, (title, xs, ts, Z) in zip(axes[:, 0], panels):
        finite = Z[np.isfinite(Z)]
        lim = float(np.max(np.abs(finite))) if finite.size else 1.0
        # signed log scaling keeps the zero crossing visible across a wide range
        S = np.sign(Z) * np.log1p(np.abs(Z))
        m = ax.pcolormesh(ts, xs, S, shading="auto", cmap="RdBu", vmin=-np.log1p(lim),
                          vmax=np.log1p(lim))
        ax.contour(ts, xs, Z, levels=[0.0], colors="k", linewidths=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(title)
        fig.colorbar(m, ax=ax, label="sign(V) log(1+|V|)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_run_plots(result, out_dir, render=True) -> list:
    """Write state/parameter plot data (and PNGs) for one run. Returns paths."""
    sc = result.pipeline.scenario
    paths = []
    sp = os.path.join(out_dir, "plot_state.csv")
    hdr, cols = state_data(result.trace, sc.predicates, sp)
    paths.append(sp)
    pp = os.path.join(out_dir, "plot_params.csv")
    phdr, pcols = param_data(result.trace, result.pipeline.layout, pp)
    paths.append(pp)
    if render:
        render_state(hdr, cols, os.path.join(out_dir, "plot_state.png"), sc.name)
        render_params(phdr, pcols, os.path.join(out_dir, "plot_params.png"), sc.name)
        paths += [os.path.join(out_dir, "plot_state.png"), os.path.join(out_dir, "plot_params.png")]
    return paths
