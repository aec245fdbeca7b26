import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_robustness

from cbfstl.formula import BandPredicate, parse_formula
from cbfstl.oracle import (EPS_DISC, HorizonError, SampledSignal, robustness, robustness_signal,
                           satisfied, verdict)

P = {"p": BandPredicate("p", 2.0, 0.5, 0.0), "q": BandPredicate("q", 1.0, 0.4, 1.0)}
FORMULAS = ["G[0,2](p)", "F[0.5,3](q)", "p U[1,2] q", "G[0,1](F[0,1.5](p | q))",
            "F[0,2](p & G[0,1](!q))", "(p U[0,1] q) | G[1,2](p)"]


def _sig(xs, dt=0.5):
    return SampledSignal(np.arange(len(xs)) * dt, np.asarray(xs, float))


def test_constant_signal_in_band():
    sig = _sig([0.0] * 20)
    assert robustness(parse_formula("G[0,5](p)"), sig, 0.0, P) == pytest.approx(2.0 * 0.25)
    sig = _sig([0.5] * 20)
    assert robustness(parse_formula("G[0,5](p)"), sig, 0.0, P) == pytest.approx(0.0, abs=1e-15)


def test_interpolated_window_max():
    # two samples crossing the band: the max of h is where x passes the centre
    sig = SampledSignal(np.array([0.0, 1.0]), np.array([-1.0, 1.0]))
    rho = robustness(parse_formula("F[0,1](p)"), sig, 0.0, P)
    assert rho == pytest.approx(0.5)
    ref = naive_robustness(parse_formula("F[0,1](p)"), P, sig.times, sig.states, 0.0, dense=10)
    assert abs(rho - ref) <= EPS_DISC


def test_verdict_thresholds():
    assert verdict(0.5) == "sat"
    assert verdict(-0.5) == "unsat"
    assert verdict(0.01, 0.05) == "marginal"
    assert verdict(0.05) == "sat" and verdict(-0.05) == "unsat"
    sig = _sig([0.0] * 20)
    assert satisfied(parse_formula("G[0,5](p)"), sig, 0.0, P) == "sat"


def test_horizon_error():
    sig = _sig([0.0] * 5)  # lasts 2 s
    with pytest.raises(HorizonError):
        robustness(parse_formula("G[0,3](p)"), sig, 0.0, P)
    with pytest.raises(HorizonError):
        robustness(parse_formula("F[0,1](p)"), sig, 1.5, P)


def test_signal_validation():
    with pytest.raises(ValueError):
        SampledSignal(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        SampledSignal(np.array([0.0, 0.0]), np.array([1.0, 2.0]))


def test_rejects_normalized_until():
    from cbfstl.formula import normalize_until

    f = normalize_until(parse_formula("p U[0,1] q"))
    with pytest.raises(TypeError):
        robustness(f, _sig([0.0] * 10), 0.0, P)


signals = st.lists(st.floats(-1.5, 2.0), min_size=14, max_size=20)


@pytest.mark.parametrize("text", FORMULAS)
def test_dense_resampling_cross_check(text):
    f = parse_formula(text)
    rng = np.random.default_rng(zlib.crc32(text.encode()))
    for _ in range(5):
        # trace-like signal: 0.1 s samples, |xdot| <= 1
        xs = np.cumsum(np.r_[rng.uniform(-0.5, 1.5), rng.uniform(-0.1, 0.1, 60)])
        sig = _sig(xs, dt=0.1)
        rho = robustness(f, sig, 0.0, P)
        ref = naive_robustness(f, P, sig.times, sig.states, 0.0, dense=10)
        assert abs(rho - ref) <= EPS_DISC


@given(signals)
def test_de_morgan(xs):
    sig = _sig(xs)
    # negation is pushed to the predicates, so compare the two pushed forms
    a = robustness(parse_formula("G[0,2](!(p & q))"), sig, 0.0, P)
    b = robustness(parse_formula("G[0,2](!p | !q)"), sig, 0.0, P)
    c = robustness(parse_formula("F[0,2](p & q)"), sig, 0.0, P)
    assert a == b == -c
    a = robustness(parse_formula("F[0,3](!(p | !q))"), sig, 0.0, P)
    b = robustness(parse_formula("F[0,3](!p & q)"), sig, 0.0, P)
    assert a == b


@given(signals, st.sampled_from(["p", "q", "p & q", "p | !q"]))
def test_always_eventually_duality(xs, body):
    sig = _sig(xs)
    g = robustness(parse_formula(f"G[0.5,3]({body})"), sig, 0.0, P)
    f = robustness(parse_formula(f"F[0.5,3](!({body}))"), sig, 0.0, P)
    assert g == -f


@given(signals, st.floats(0, 2), st.floats(0, 2))
def test_until_upper_bound(xs, a, w):
    sig = _sig(xs)
    a, b = round(a, 2), round(a + w, 2)
    u = robustness(parse_formula(f"p U[{a:g},{b:g}] q"), sig, 0.0, P)
    g = robustness(parse_formula(f"G[{a:g},{a:g}](p)"), sig, 0.0, P)
    f = robustness(parse_formula(f"F[{a:g},{b:g}](q)"), sig, 0.0, P)
    assert u <= min(g, f) + 1e-12


@given(signals, st.sampled_from(FORMULAS))
def test_refinement_soundness(xs, text):
    f = parse_formula(text)
    sig = _sig(xs)
    t2 = np.linspace(sig.times[0], sig.times[-1], 2 * len(sig.times) - 1)
    fine = SampledSignal(t2, sig.at(t2))
    rho1, rho2 = robustness(f, sig, 0.0, P), robustness(f, fine, 0.0, P)
    x = np.asarray(xs)
    slope = np.max(np.abs(np.diff(x))) / 0.5
    grad = max(2 * p.c * max(abs(x.max() - p.x0), abs(x.min() - p.x0)) for p in P.values())
    assert abs(rho1 - rho2) <= grad * slope * 0.5 + 1e-9


def test_robustness_signal_matches_pointwise():
    rng = np.random.default_rng(4)
    sig = _sig(rng.uniform(-1, 1.5, 30))
    f = parse_formula("p U[0.5,1.5] q")
    ts = np.linspace(0, 12, 25)
    vec = robustness_signal(f, sig, ts, P)
    assert np.allclose(vec, [robustness(f, sig, t, P) for t in ts], atol=0)
