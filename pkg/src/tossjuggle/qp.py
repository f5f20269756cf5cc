"""Small dense convex QP solver for equality constraints and box bounds.

    minimize    1/2 x^T H x + f^T x
    subject to  A x = b,  lb <= x <= ub

The equality-constrained optimum is tried first.  If it violates the bounds a
feasible point is found with a phase-1 LP and a primal active-set method runs
from there.  ``H`` must be positive definite on the null space of ``A``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    lam: np.ndarray                    # equality multipliers
    mu: np.ndarray                     # bound multipliers, > 0 at lower, < 0 at upper
    active: np.ndarray                 # -1 at lower bound, +1 at upper, 0 free
    iterations: int = 0
    kkt_residual: float = np.inf
    message: str = ""
    infeasible_set: list = field(default_factory=list)


def independent_rows(A, b, tol=1e-10):
    """Drop linearly dependent equality rows; ``None`` if the rows are inconsistent."""
    if A.shape[0] == 0:
        return A, b
    Q, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
    keep = np.sort(piv[:rank])
    A2, b2 = A[keep], b[keep]
    if rank < A.shape[0]:
        x, *_ = np.linalg.lstsq(A2, b2, rcond=None)
        if np.max(np.abs(A @ x - b)) > 1e-8 * max(1.0, np.max(np.abs(b))):
            return None
    return A2, b2


def _solve_kkt(H, g, A, rhs):
    """Solve [H A^T; A 0][p; lam] = [-g; rhs]."""
    n, m = H.shape[0], A.shape[0]
    if m == 0:
        return scipy.linalg.solve(H, -g, assume_a="sym"), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    r = np.concatenate([-g, rhs])
    try:
        sol = scipy.linalg.solve(K, r, assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError):
        sol = np.linalg.lstsq(K, r, rcond=None)[0]
    return sol[:n], sol[n:]


def _eqp(H, f, A, b, x_fixed, free):
    """Minimise over the free variables with the others held at ``x_fixed``."""
    fixed = ~free
    Hff = H[np.ix_(free, free)]
    g = f[free] + H[np.ix_(free, fixed)] @ x_fixed[fixed]
    Af = A[:, free]
    rhs = b - A[:, fixed] @ x_fixed[fixed]
    xf, lam = _solve_kkt(Hff, g, Af, rhs)
    x = x_fixed.copy()
    x[free] = xf
    return x, lam


def kkt_residual(H, f, A, b, lb, ub, x, lam):
    """Infinity norm of the first-order optimality violation.

    Bound multipliers are recovered from the stationarity residual, so the
    value combines stationarity on free variables, dual sign at active
    bounds, and primal feasibility.
    """
    grad = H @ x + f + A.T @ lam
    scale = max(1.0, np.max(np.abs(f)) if f.size else 1.0)
    span = np.maximum(ub - lb, 1e-300)
    rel = 1e-9 * span
    at_lo = np.abs(x - lb) <= rel
    at_hi = np.abs(ub - x) <= rel
    free = ~(at_lo | at_hi)
    stat = np.max(np.abs(grad[free])) if free.any() else 0.0
    dual = 0.0
    if at_lo.any():
        dual = max(dual, np.max(np.maximum(-grad[at_lo], 0.0)))
    if at_hi.any():
        dual = max(dual, np.max(np.maximum(grad[at_hi], 0.0)))
    bscale = max(1.0, np.max(np.abs(b)) if b.size else 1.0)
    prim = np.max(np.abs(A @ x - b)) / bscale if b.size else 0.0
    prim = max(prim, np.max(np.maximum(lb - x, 0.0)), np.max(np.maximum(x - ub, 0.0)))
    return max(stat / scale, dual / scale, prim)


def _phase1(A, b, lb, ub):
    """Minimise ``|A x - b|_1`` over the box; returns (x, violation)."""
    m, n = A.shape
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    A_eq = np.hstack([A, np.eye(m), -np.eye(m)])
    bounds = [(lo, hi) for lo, hi in zip(lb, ub)] + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=A_eq, b_eq=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None, np.inf
    x = np.clip(res.x[:n], lb, ub)
    return x, float(np.max(np.abs(A @ x - b))) if m else 0.0


def solve_qp(H, f, A, b, lb, ub, max_iter=500, tol=1e-10) -> QPResult:
    """Solve the box- and equality-constrained QP.

    Returns
    -------
    QPResult
        ``status`` is ``"optimal"``, ``"infeasible"`` (with the bounds active at
        the least-violation point in ``infeasible_set``) or ``"max-iterations"``.
    """
    H = np.asarray(H, float)
    f = np.asarray(f, float)
    A = np.asarray(A, float).reshape(-1, H.shape[0])
    b = np.asarray(b, float)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    n = H.shape[0]
    H = 0.5 * (H + H.T)

    reduced = independent_rows(A, b)
    if reduced is None:
        return QPResult(np.zeros(n), INFEASIBLE, np.zeros(0), np.zeros(n),
                        np.zeros(n, int), message="inconsistent equality constraints")
    A, b = reduced
    bscale = max(1.0, np.max(np.abs(b)) if b.size else 1.0)

    # 1. equality-constrained optimum
    x, lam = _solve_kkt(H, f, A, b)
    span = ub - lb
    if np.all(x >= lb - tol * span) and np.all(x <= ub + tol * span):
        x = np.clip(x, lb, ub)
        res = QPResult(x, OPTIMAL, lam, np.zeros(n), np.zeros(n, int), 0)
        res.kkt_residual = kkt_residual(H, f, A, b, lb, ub, x, lam)
        return res

    # 2. feasible start
    x, viol = _phase1(A, b, lb, ub)
    if x is None or viol > 1e-9 * bscale:
        active = []
        if x is not None:
            active = [int(i) for i in np.flatnonzero(np.isclose(x, lb) | np.isclose(x, ub))]
        return QPResult(np.zeros(n) if x is None else x, INFEASIBLE, np.zeros(A.shape[0]),
                        np.zeros(n), np.zeros(n, int),
                        message=f"bounds cannot meet equality constraints (violation {viol:.3g})",
                        infeasible_set=active)

    # 3. primal active set over the bound constraints
    work = np.zeros(n, int)
    work[np.isclose(x, lb, rtol=0, atol=1e-12 * span)] = -1
    work[np.isclose(x, ub, rtol=0, atol=1e-12 * span)] = 1
    # a vertex start may over-determine the equalities; free bounds until solvable
    lam = np.zeros(A.shape[0])
    for it in range(1, max_iter + 1):
        free = work == 0
        x_fixed = np.where(work < 0, lb, np.where(work > 0, ub, x))
        xe, lam_e = _eqp(H, f, A, b, x_fixed, free)
        p = xe - x
        feasible_eq = np.max(np.abs(A @ xe - b)) <= 1e-9 * bscale if b.size else True
        if not feasible_eq:
            # working set conflicts with the equalities: release the bound whose
            # release most reduces the violation (largest |A column| heuristic)
            cand = np.flatnonzero(work != 0)
            scores = np.abs(A[:, cand]).sum(axis=0)
            work[cand[np.argmax(scores)]] = 0
            continue
        if np.max(np.abs(p)) <= 1e-12 * max(1.0, np.max(np.abs(x))):
            x = xe
            lam = lam_e
            grad = H @ x + f + A.T @ lam
            mu = np.where(work != 0, grad, 0.0)
            # multiplier sign convention: lower bound needs grad >= 0, upper grad <= 0
            wrong = np.where(work < 0, -grad, np.where(work > 0, grad, -np.inf))
            j = int(np.argmax(wrong))
            if wrong[j] <= 1e-12 * max(1.0, np.max(np.abs(grad))):
                res = QPResult(x, OPTIMAL, lam, mu, work.copy(), it)
                res.kkt_residual = kkt_residual(H, f, A, b, lb, ub, x, lam)
                return res
            work[j] = 0
            continue
        # ratio test along p for free variables
        step = 1.0
        block = -1
        kind = 0
        for i in np.flatnonzero(free):
            if p[i] < 0:
                t = (lb[i] - x[i]) / p[i]
                if t < step:
                    step, block, kind = t, i, -1
            elif p[i] > 0:
                t = (ub[i] - x[i]) / p[i]
                if t < step:
                    step, block, kind = t, i, 1
        step = max(step, 0.0)
        x = x + step * p
        if block >= 0:
            x[block] = lb[block] if kind < 0 else ub[block]
            work[block] = kind
    res = QPResult(x, MAX_ITERATIONS, lam, np.zeros(n), work, max_iter)
    res.kkt_residual = kkt_residual(H, f, A, b, lb, ub, x, lam)
    return res
