"""Quantitative STL robustness over piecewise-linear sampled signals.

Independent of the control pipeline: Until is evaluated as a primitive and
nothing from the operator machinery is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .formula import (And, Always, BandPredicate, Eventually, Or, Pred, Until,
                      horizon)

EPS_DISC = 0.05


class HorizonError(ValueError):
    pass


@dataclass(frozen=True)
class SampledSignal:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or t.shape != x.shape or len(t) < 2:
            raise ValueError("signal needs matching 1-D times/states with >= 2 samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("signal times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def at(self, t):
        return np.interp(t, self.times, self.states)


def refine_at_levels(sig: SampledSignal, levels) -> SampledSignal:
    """Insert the points where the linear interpolant crosses each level.

    With every band center inserted, h is monotone on each segment, so window
    extrema of a predicate are attained at samples or window endpoints.
    """
    t, x = sig.times, sig.states
    extra = [t]
    for c in levels:
        a, b = x[:-1] - c, x[1:] - c
        k = np.nonzero(a * b < 0)[0]
        extra.append(t[k] + a[k] / (a[k] - b[k]) * (t[k + 1] - t[k]))
    tt = np.unique(np.concatenate(extra))
    if len(tt) == len(t):
        return sig
    return SampledSignal(tt, sig.at(tt))


def _window_points(sig, lo, hi):
    """Sample times inside [lo, hi]."""
    i = np.searchsorted(sig.times, lo, side="left")
    j = np.searchsorted(sig.times, hi, side="right")
    return sig.times[i:j]


def _rho(f, sig: SampledSignal, ts: np.ndarray, preds) -> np.ndarray:
    if isinstance(f, Pred):
        return preds[f.label].h(sig.at(ts), f.negated)
    if isinstance(f, And):
        return np.min([_rho(c, sig, ts, preds) for c in f.children], axis=0)
    if isinstance(f, Or):
        return np.max([_rho(c, sig, ts, preds) for c in f.children], axis=0)
    if isinstance(f, (Always, Eventually)):
        starts, ends = ts + f.lo, ts + f.hi
        q = np.unique(np.concatenate([starts, ends,
                                      _window_points(sig, starts[0], ends[-1])]))
        v = _rho(f.child, sig, q, preds)
        lo = np.searchsorted(q, starts, side="left")
        hi = np.searchsorted(q, ends, side="right")
        idx = np.empty(2 * len(ts), dtype=np.intp)
        idx[0::2], idx[1::2] = lo, hi
        ufunc = np.minimum if isinstance(f, Always) else np.maximum
        # reduceat over interleaved (lo, hi) pairs; hi may equal len(q)
        vpad = np.append(v, np.nan)
        return ufunc.reduceat(vpad, idx)[0::2]
    if isinstance(f, Until):
        q = np.unique(np.concatenate([ts, ts + f.lo, ts + f.hi,
                                      _window_points(sig, ts[0], ts[-1] + f.hi)]))
        v1 = _rho(f.left, sig, q, preds)
        v2 = _rho(f.right, sig, q, preds)
        i0 = np.searchsorted(q, ts, side="left")
        ja = np.searchsorted(q, ts + f.lo, side="left")
        jb = np.searchsorted(q, ts + f.hi, side="right")
        out = np.empty(len(ts))
        for n in range(len(ts)):
            run = np.minimum.accumulate(v1[i0[n]:jb[n]])
            k = ja[n] - i0[n]
            out[n] = np.max(np.minimum(v2[ja[n]:jb[n]], run[k:]))
        return out
    raise TypeError(f"oracle does not evaluate {type(f).__name__}; pass the un-normalized formula")


def robustness_signal(f, sig: SampledSignal, ts, predicates: Mapping[str, BandPredicate]):
    """Robustness at each time in `ts` (sorted)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    need = horizon(f)
    if ts[0] < sig.times[0] - 1e-9 or ts[-1] + need > sig.times[-1] + 1e-9:
        raise HorizonError(f"formula horizon {need:g} from t={ts[-1]:g} exceeds signal end "
                           f"{sig.times[-1]:g}")
    ts = np.clip(ts, sig.times[0], sig.times[-1])
    sig = refine_at_levels(sig, sorted({p.x0 for p in predicates.values()}))
    return _rho(f, sig, ts, predicates)


def robustness(f, sig: SampledSignal, t: float, predicates: Mapping[str, BandPredicate]) -> float:
    return float(robustness_signal(f, sig, [t], predicates)[0])


def satisfied(f, sig, t, predicates, eps_disc: float = EPS_DISC) -> str:
    return verdict(robustness(f, sig, t, predicates), eps_disc)


def verdict(rho: float, eps_disc: float = EPS_DISC) -> str:
    if rho >= eps_disc:
        return "sat"
    if rho <= -eps_disc:
        return "unsat"
    return "marginal"
