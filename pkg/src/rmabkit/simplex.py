"""Linear program solvers.

The reference solver is a dense two-phase revised simplex using Bland's
rule for both the entering and leaving choices.  Bland's rule is slower
than steepest-edge style pricing but cannot cycle, which matters because
occupancy-measure programs are heavily degenerate.  A HiGHS-backed solver
(via scipy) sits behind the same interface for programs too large for a
dense tableau; solve_auto picks between them by problem size.

Problems are stated as::

    max/min  c @ x
    s.t.     A_eq @ x == b_eq
             A_ub @ x <= b_ub
             x >= 0
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"

# Above either limit the dense tableau is not worth building.
DENSE_MAX_ROWS = 1200
DENSE_MAX_ENTRIES = 3_000_000


@dataclass
class LpResult:
    status: str
    x: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int
    backend: str


def _pivot_update(binv: np.ndarray, direction: np.ndarray, leave_row: int) -> None:
    # binv <- E @ binv for the elementary matrix of this pivot (in place).
    piv = direction[leave_row]
    binv[leave_row, :] /= piv
    factor = direction.copy()
    factor[leave_row] = 0.0
    binv -= np.outer(factor, binv[leave_row, :])


def _refactor(A: np.ndarray, basis: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(A[:, basis])
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("simplex basis became numerically singular") from exc


def _bland_iterate(A, b, cost, basis, binv, allowed, tol, max_iter, refactor_every=128):
    """Run simplex iterations maximizing cost @ x.

    Returns (status, iterations, binv); basis is updated in place.
    `allowed` marks columns eligible to enter (artificials are excluded in
    phase 2).  The basis inverse is refreshed periodically, and optimality /
    unboundedness verdicts are re-verified against a fresh factorization:
    occupancy programs are degenerate enough that product-form updates
    alone drift past the pivot tolerance.
    """
    m = A.shape[0]
    iters = 0
    since_refactor = 0
    verified = False
    while True:
        if iters >= max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} iterations")
        if since_refactor >= refactor_every:
            binv = _refactor(A, basis)
            since_refactor = 0
        y = cost[basis] @ binv
        reduced = cost - y @ A
        reduced[basis] = 0.0
        candidates = np.nonzero(allowed & (reduced > tol))[0]
        if candidates.size == 0:
            if verified or since_refactor == 0:
                return STATUS_OPTIMAL, iters, binv
            binv = _refactor(A, basis)
            since_refactor = 0
            verified = True
            continue
        verified = False
        enter = int(candidates[0])  # Bland: smallest eligible index
        direction = binv @ A[:, enter]
        positive = direction > tol
        if not np.any(positive):
            if since_refactor != 0:
                binv = _refactor(A, basis)
                since_refactor = 0
                continue
            return STATUS_UNBOUNDED, iters, binv
        xb = binv @ b
        ratios = np.full(m, np.inf)
        ratios[positive] = xb[positive] / direction[positive]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + 1e-12)[0]
        # Among tied rows, refuse pivots much smaller than the best available
        # (they poison the basis), then Bland: smallest basis index.
        strong = ties[direction[ties] >= 0.01 * direction[ties].max()]
        leave_row = int(strong[np.argmin(basis[strong])])
        _pivot_update(binv, direction, leave_row)
        basis[leave_row] = enter
        iters += 1
        since_refactor += 1


def revised_simplex(
    c: np.ndarray,
    A_eq: Optional[np.ndarray] = None,
    b_eq: Optional[np.ndarray] = None,
    A_ub: Optional[np.ndarray] = None,
    b_ub: Optional[np.ndarray] = None,
    *,
    maximize: bool = True,
    tol: float = 1e-9,
    max_iter: Optional[int] = None,
) -> LpResult:
    """Dense two-phase revised simplex with Bland's rule."""
    c = np.asarray(c, dtype=np.float64)
    n0 = c.size
    rhs = []
    n_eq = 0
    if A_eq is not None and len(A_eq):
        A_eq = np.asarray(A_eq, dtype=np.float64)
        rhs.append(np.asarray(b_eq, dtype=np.float64))
        n_eq = A_eq.shape[0]
    n_ub = 0
    if A_ub is not None and len(A_ub):
        A_ub = np.asarray(A_ub, dtype=np.float64)
        n_ub = A_ub.shape[0]
        rhs.append(np.asarray(b_ub, dtype=np.float64))
    if not rhs:
        raise ValueError("program has no constraints")

    m = n_eq + n_ub
    A = np.zeros((m, n0 + n_ub))
    b = np.concatenate(rhs)
    if n_eq:
        A[:n_eq, :n0] = A_eq
    if n_ub:
        A[n_eq:, :n0] = A_ub
        A[n_eq + np.arange(n_ub), n0 + np.arange(n_ub)] = 1.0  # slack columns

    # Canonical b >= 0.
    neg = b < 0
    A[neg] *= -1.0
    b[neg] = -b[neg]

    n_total = A.shape[1]
    if max_iter is None:
        max_iter = max(200, 60 * (m + n_total))

    # Phase 1 basis: slack column where it survived the sign flip, else artificial.
    basis = np.full(m, -1, dtype=np.int64)
    art_cols = []
    for i in range(m):
        slack_j = n0 + (i - n_eq) if i >= n_eq else -1
        if slack_j >= 0 and A[i, slack_j] == 1.0:
            basis[i] = slack_j
        else:
            art_cols.append(i)
    if art_cols:
        art = np.zeros((m, len(art_cols)))
        for k, i in enumerate(art_cols):
            art[i, k] = 1.0
            basis[i] = n_total + k
        A = np.hstack([A, art])
    n_with_art = A.shape[1]

    binv = np.linalg.inv(A[:, basis])
    phase1_cost = np.zeros(n_with_art)
    phase1_cost[n_total:] = -1.0  # maximize -(sum of artificials)
    allowed = np.ones(n_with_art, dtype=bool)
    status, it1, binv = _bland_iterate(A, b, phase1_cost, basis, binv, allowed, tol, max_iter)
    if status != STATUS_OPTIMAL:
        raise RuntimeError("phase 1 cannot be unbounded")
    xb = binv @ b
    if float(phase1_cost[basis] @ xb) < -1e-7:
        return LpResult(STATUS_INFEASIBLE, None, None, it1, "bland")

    # Drive surviving artificials out of the basis; drop rows that prove redundant.
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n_total:
            row_of_binv = binv[i, :]
            pivot_col = -1
            for j in range(n_total):
                if j in basis:
                    continue
                val = row_of_binv @ A[:, j]
                if abs(val) > 1e-7:
                    pivot_col = j
                    break
            if pivot_col >= 0:
                direction = binv @ A[:, pivot_col]
                _pivot_update(binv, direction, i)
                basis[i] = pivot_col
            else:
                keep[i] = False
    if not np.all(keep):
        A = A[keep][:, :n_total]
        b = b[keep]
        basis = basis[keep]
        m = A.shape[0]
        binv = np.linalg.inv(A[:, basis])
    else:
        A = A[:, :n_total]

    sign = 1.0 if maximize else -1.0
    phase2_cost = np.zeros(n_total)
    phase2_cost[:n0] = sign * c
    allowed = np.ones(n_total, dtype=bool)
    status, it2, binv = _bland_iterate(A, b, phase2_cost, basis, binv, allowed, tol, max_iter)
    if status == STATUS_UNBOUNDED:
        return LpResult(STATUS_UNBOUNDED, None, None, it1 + it2, "bland")
    x = np.zeros(n_total)
    x[basis] = binv @ b
    x = x[:n0]
    return LpResult(STATUS_OPTIMAL, x, float(c @ x), it1 + it2, "bland")


def highs_solve(
    c: np.ndarray,
    A_eq=None,
    b_eq=None,
    A_ub=None,
    b_ub=None,
    *,
    maximize: bool = True,
) -> LpResult:
    """Solve with scipy's HiGHS dual simplex (sparse inputs welcome)."""
    from scipy.optimize import linprog

    c = np.asarray(c, dtype=np.float64)
    obj = -c if maximize else c
    res = linprog(
        obj,
        A_eq=A_eq if A_eq is not None and _nrows(A_eq) else None,
        b_eq=b_eq if A_eq is not None and _nrows(A_eq) else None,
        A_ub=A_ub if A_ub is not None and _nrows(A_ub) else None,
        b_ub=b_ub if A_ub is not None and _nrows(A_ub) else None,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-9,
            "dual_feasibility_tolerance": 1e-9,
        },
    )
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpResult(STATUS_INFEASIBLE, None, None, iters, "highs")
    if res.status == 3:
        return LpResult(STATUS_UNBOUNDED, None, None, iters, "highs")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, dtype=np.float64)
    return LpResult(STATUS_OPTIMAL, x, float(c @ x), iters, "highs")


def _nrows(a) -> int:
    return a.shape[0] if hasattr(a, "shape") else len(a)


def solve_auto(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, *, maximize=True, backend="auto") -> LpResult:
    """Route to the dense Bland simplex or HiGHS depending on size.

    The choice is a deterministic function of problem dimensions, so
    repeated solves of the same program take the same path.
    """
    if backend not in ("auto", "bland", "highs"):
        raise ValueError(f"unknown backend {backend!r}")
    n = np.asarray(c).size
    m = (_nrows(A_eq) if A_eq is not None else 0) + (_nrows(A_ub) if A_ub is not None else 0)
    if backend == "auto":
        backend = "bland" if (m <= DENSE_MAX_ROWS and m * (n + m) <= DENSE_MAX_ENTRIES) else "highs"
    if backend == "bland":
        dense = lambda a: a.toarray() if hasattr(a, "toarray") else a
        return revised_simplex(
            c,
            dense(A_eq) if A_eq is not None else None,
            b_eq,
            dense(A_ub) if A_ub is not None else None,
            b_ub,
            maximize=maximize,
        )
    return highs_solve(c, A_eq, b_eq, A_ub, b_ub, maximize=maximize)
