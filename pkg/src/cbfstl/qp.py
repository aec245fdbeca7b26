"""Small QPs with a diagonal Hessian, solved as least-distance problems.

    minimize    sum_j w_j (z_j - r_j)^2
    subject to  G z >= h,  lb <= z <= ub

With y = sqrt(w) (z - r) this is  min |y|^2  s.t.  A y >= b, which the
Lawson-Hanson construction reduces to one non-negative least-squares solve.
No starting point is needed and nnls terminates finitely.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls


class QPFailure(RuntimeError):
    pass


def constraint_rows(G, h, lb, ub):
    """Stack the general rows and the finite box sides as C z >= d."""
    n = len(lb)
    eye = np.eye(n)
    fin_lo = np.isfinite(lb)
    fin_hi = np.isfinite(ub)
    C = np.vstack([G, eye[fin_lo], -eye[fin_hi]])
    d = np.concatenate([h, lb[fin_lo], -ub[fin_hi]])
    return C, d


def solve_qp(w, r, G, h, lb, ub, tol: float = 1e-9):
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    n = len(w)
    if np.any(w <= 0):
        raise QPFailure("weights must be positive")
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float).reshape(-1)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        raise QPFailure("empty box")
    C, d = constraint_rows(G, h, lb, ub)
    if np.all(C @ r >= d - tol):
        return r.copy()

    s = 1.0 / np.sqrt(w)
    A = C * s[None, :]
    b = d - C @ r
    # row scaling keeps nnls well conditioned when weights differ by decades
    nrm = np.linalg.norm(A, axis=1)
    nrm[nrm == 0] = 1.0
    A = A / nrm[:, None]
    b = b / nrm
    E = np.vstack([A.T, b[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    u, _ = nnls(E, f, maxiter=50 * E.shape[1])
    res = E @ u - f
    if abs(res[-1]) < 1e-12:
        raise QPFailure("constraints are infeasible")
    y = -res[:n] / res[-1]
    z = r + s * y
    z = np.clip(z, lb, ub)
    viol = float(np.max(d - C @ z)) if len(d) else 0.0
    if viol > 1e-6 * (1.0 + float(np.max(np.abs(d)))):
        raise QPFailure(f"solution violates constraints by {viol:.3g}")
    return z
