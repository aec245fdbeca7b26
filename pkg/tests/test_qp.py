import os

import numpy as np
import pytest

from cbfstl.qp import QPFailure, constraint_rows, solve_qp

cp = pytest.importorskip("cvxpy")

DATA = os.path.join(os.path.dirname(__file__), "data")


def _reference(w, r, G, h, lb, ub):
    z = cp.Variable(len(w))
    cons = [G @ z >= h]
    fin = np.isfinite(lb)
    if fin.any():
        cons.append(z[fin] >= lb[fin])
    fin = np.isfinite(ub)
    if fin.any():
        cons.append(z[fin] <= ub[fin])
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(w, cp.square(z - r)))), cons)
    prob.solve()
    return prob.status, z.value


def _cost(w, r, z):
    return float(np.sum(w * (z - r) ** 2))


def test_unconstrained_reference_returned():
    z = solve_qp([1, 1], [0.2, -0.3], np.zeros((0, 2)), [], [-1, -1], [1, 1])
    assert z.tolist() == [0.2, -0.3]


def test_single_halfspace_projection():
    # min |z|^2 s.t. z0 + z1 >= 2  ->  (1, 1)
    z = solve_qp([1, 1], [0, 0], [[1, 1]], [2], [-np.inf] * 2, [np.inf] * 2)
    assert np.allclose(z, [1, 1], atol=1e-9)


def test_box_only():
    z = solve_qp([1, 4], [3, -3], np.zeros((0, 2)), [], [-1, -1], [1, 1])
    assert np.allclose(z, [1, -1])


def test_infeasible():
    with pytest.raises(QPFailure):
        solve_qp([1], [0], [[1], [-1]], [1, 1], [-np.inf], [np.inf])
    with pytest.raises(QPFailure):
        solve_qp([1, 1], [0, 0], [[1, 0]], [3], [-1, -1], [1, 1])


def test_rejects_bad_input():
    with pytest.raises(QPFailure):
        solve_qp([0, 1], [0, 0], [[1, 1]], [1], [-1, -1], [1, 1])
    with pytest.raises(QPFailure):
        solve_qp([1, 1], [0, 0], [[1, 1]], [1], [1, -1], [0, 1])


def test_constraint_rows_skip_infinite_sides():
    C, d = constraint_rows(np.ones((1, 2)), np.array([0.5]), np.array([-1, -np.inf]),
                           np.array([np.inf, 2.0]))
    assert C.shape == (3, 2)
    assert d.tolist() == [0.5, -1.0, -2.0]


@pytest.mark.parametrize("seed", range(25))
def test_matches_cvxpy_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 5))
    w = 10 ** rng.uniform(-1, 4, n)
    r = rng.normal(0, 2, n)
    G = rng.normal(0, 1, (m, n))
    x_feas = rng.uniform(-1, 1, n)
    h = G @ x_feas - rng.uniform(0, 0.5, m)  # x_feas is feasible
    lb = np.where(rng.uniform(size=n) < 0.7, -2.0, -np.inf)
    ub = np.where(rng.uniform(size=n) < 0.7, 2.0, np.inf)
    z = solve_qp(w, r, G, h, lb, ub)
    status, zr = _reference(w, r, G, h, lb, ub)
    assert status == "optimal"
    assert np.all(G @ z >= h - 1e-6)
    assert np.all(z >= lb) and np.all(z <= ub)
    assert _cost(w, r, z) <= _cost(w, r, zr) * (1 + 1e-5) + 1e-7


def test_degenerate_controller_instance():
    # a step from the affine preset where an earlier active-set solver cycled
    with np.load(os.path.join(DATA, "qp_degenerate.npz")) as d:
        w, r, G, h, lb, ub = (d[k] for k in ("w", "r", "G", "h", "lb", "ub"))
    z = solve_qp(w, r, G, h, lb, ub)
    status, zr = _reference(w, r, G, h, lb, ub)
    assert status in ("optimal", "optimal_inaccurate")
    assert np.all(G @ z >= h - 1e-6 * (1 + np.abs(h)))
    assert _cost(w, r, z) == pytest.approx(_cost(w, r, zr), rel=1e-4)
