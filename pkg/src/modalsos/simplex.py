"""Dense two-phase revised simplex for the extraction LPs.

Solves  min c.x  s.t.  A x = b,  x >= 0  and returns an optimal basic
solution.  Pivoting is deterministic: Dantzig pricing with lowest-index tie
breaking, switching permanently to Bland's rule after a long degenerate
streak so cycling cannot occur.  The basis inverse is kept explicitly and
refactorized periodically; problem sizes here are a few hundred rows by a
few thousand columns, comfortably dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9
COST_TOL = 1e-9
PIVOT_TOL = 1e-7  # entries below this never pivot (conditioning guard)
ZERO_TOL = 1e-12  # entries below this count as nonpositive (unboundedness)
DEGENERATE_STREAK = 40



class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    obj: float
    status: str  # optimal | infeasible | unbounded
    iterations: int
    basis: np.ndarray = field(default=None)


def _core(A, b, c, basis, allowed, max_iters, start_iter=0):
    """Run simplex iterations from a feasible basis; returns (status, iters).

    ``allowed`` masks columns that may enter the basis.  The basis matrix is
    factorized afresh every iteration: the LPs here are a few hundred rows,
    and exact directions beat eta-update bookkeeping for robustness.
    """
    import scipy.linalg as sla

    bland = False
    degenerate = 0
    iters = start_iter
    while iters < max_iters:
        iters += 1
        try:
            lu = sla.lu_factor(A[:, basis])
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded pivots
            raise LPError(f"singular basis at iteration {iters}") from exc
        xB = sla.lu_solve(lu, b)
        if xB.min(initial=0.0) < -1e-6 * (1.0 + np.abs(b).max()):
            raise LPError(f"lost primal feasibility at iteration {iters}")
        duals = sla.lu_solve(lu, c[basis], trans=1)
        reduced = c - duals @ A
        reduced[basis] = 0.0
        candidates = np.flatnonzero((reduced < -COST_TOL) & allowed)
        if candidates.size == 0:
            return "optimal", iters, basis, lu, np.maximum(xB, 0.0)
        if not bland:
            candidates = candidates[np.argsort(reduced[candidates], kind="stable")]
        # reject entering columns whose only positive entries are too small
        # to pivot on; truly nonpositive directions certify unboundedness
        direction = positive = None
        for enter in map(int, candidates[:30]):
            cand_dir = sla.lu_solve(lu, A[:, enter])
            if cand_dir.max(initial=0.0) <= ZERO_TOL:
                return "unbounded", iters, basis, lu, np.maximum(xB, 0.0)
            cand_pos = np.flatnonzero(cand_dir > PIVOT_TOL)
            if cand_pos.size:
                direction, positive = cand_dir, cand_pos
                break
        if direction is None:
            # nothing numerically pivotable is left
            return "optimal", iters, basis, lu, np.maximum(xB, 0.0)
        ratios = np.maximum(xB[positive], 0.0) / direction[positive]
        theta = ratios.min()
        ties = positive[np.flatnonzero(np.abs(ratios - theta) <= FEAS_TOL)]
        if bland:
            # lowest variable index leaves: finite by Bland's theorem
            leave_row = int(ties[np.argmin(basis[ties])])
        else:
            # largest pivot among the ties keeps the basis well conditioned
            leave_row = int(ties[np.argmax(direction[ties])])
        if theta <= FEAS_TOL:
            degenerate += 1
            if degenerate >= DEGENERATE_STREAK:
                bland = True
        else:
            degenerate = 0
        basis[leave_row] = enter
    raise LPError(f"simplex exceeded {max_iters} iterations (cycling guard)")


def solve_standard_lp(A, b, c, max_iters=50000) -> LPResult:
    """Two-phase revised simplex on min c.x s.t. A x = b, x >= 0."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    flip = b < 0
    if flip.any():
        A = A.copy()
        A[flip] *= -1.0
        b[flip] *= -1.0

    import scipy.linalg as sla

    # deterministic perturbation against degenerate stalling; the final
    # basic values are recomputed with the true right-hand side below
    scale_b = 1.0 + np.abs(b).max()
    b_pert = b + 1e-7 * scale_b * (1.0 + np.arange(m)) / m

    # phase 1: artificial basis
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, dtype=bool)
    status, iters, basis, lu, xB = _core(A1, b_pert, c1, basis, allowed, max_iters)
    if status != "optimal":
        raise LPError("phase 1 terminated abnormally")
    if float(c1[basis] @ xB) > 1e-5 * scale_b:
        return LPResult(np.zeros(n), np.nan, "infeasible", iters)

    # drive artificials out of the basis where possible; redundant rows keep
    # a zero-valued artificial which is then barred from re-entering
    for row in range(m):
        if basis[row] < n:
            continue
        in_basis = set(basis.tolist())
        tableau_row = sla.lu_solve(lu, np.eye(m)[row], trans=1) @ A
        pivots = [
            j
            for j in np.flatnonzero(np.abs(tableau_row) > 1e-8)
            if j not in in_basis
        ]
        if pivots:
            basis[row] = int(pivots[0])
            lu = sla.lu_factor(A1[:, basis])

    # phase 2
    c2 = np.concatenate([c, np.zeros(m)])
    allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
    status, iters, basis, lu, xB = _core(
        A1, b_pert, c2, basis, allowed, max_iters, start_iter=iters
    )
    if status == "unbounded":
        return LPResult(np.zeros(n), -np.inf, "unbounded", iters)
    # evaluate the optimal basis against the unperturbed right-hand side
    x = np.zeros(n + m)
    x[basis] = np.maximum(sla.lu_solve(lu, b), 0.0)
    return LPResult(x[:n], float(c @ x[:n]), "optimal", iters, basis.copy())
