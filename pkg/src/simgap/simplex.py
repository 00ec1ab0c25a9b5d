"""Two-phase dense tableau simplex with Bland's anti-cycling rule.

Solves the standard form

    minimize    c @ x
    subject to  A @ x = b,   x >= 0

and reports an optimal basic solution, an infeasibility certificate (a row
whose artificial variable stays positive after phase 1), or an unbounded
improving direction. Bland's rule (always pick the lowest-index eligible
entering and leaving variable) makes cycling impossible, at the price of
more pivots than steepest-descent rules; problem sizes in this package stay
small enough for the dense tableau to be the simplest correct choice.

Unit columns already present in A are reused as the initial basis, so
artificial variables are added only for rows no unit column covers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

FEASIBILITY_TOL = 1e-9
OPTIMALITY_TOL = 1e-9


@dataclass
class SimplexResult:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    basis: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None   # multipliers y of the equality rows
    infeasible_row: Optional[int] = None
    phase1_objective: Optional[float] = None
    unbounded_var: Optional[int] = None
    iterations: int = 0


def _find_unit_columns(a: np.ndarray) -> dict:
    """Map row -> column index for columns that are exactly a +1 unit vector."""
    m, n = a.shape
    nonzero_counts = (a != 0.0).sum(axis=0)
    out = {}
    for col in np.nonzero(nonzero_counts == 1)[0]:
        row = int(np.nonzero(a[:, col])[0][0])
        if a[row, col] == 1.0 and row not in out:
            out[row] = int(col)
    return out


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    # cancel roundoff in the pivot column
    tab[:, col] = 0.0
    tab[row, col] = 1.0
    basis[row] = col


def _lexico_leave(tab: np.ndarray, rows: np.ndarray, col: np.ndarray, tol: float) -> int:
    """Lexicographic tie-break over candidate leaving rows.

    Among rows tied on the ratio test, compare the rows scaled by their pivot
    entries column by column and keep the lexicographically smallest; with
    lex-positive starting rows this forbids basis cycling even under heavy
    degeneracy, where fuzzy minimum-ratio ties defeat index-based rules.
    """
    cand = rows
    n_cols = tab.shape[1]
    # rhs column first (that comparison is the ratio test), then left to right
    for c in [n_cols - 1] + list(range(n_cols - 1)):
        vals = tab[cand, c] / col[cand]
        lo = vals.min()
        keep = vals <= lo + tol * (1.0 + abs(lo))
        cand = cand[keep]
        if cand.size == 1:
            return int(cand[0])
    return int(cand[0])


def _run_phase(tab: np.ndarray, basis: np.ndarray, cost_row: int, n_rows: int,
               eligible: np.ndarray, tol: float, max_iter: int):
    """Pivot until the cost row has no eligible negative reduced cost.

    Entering variable follows Bland's rule (lowest eligible index with a
    negative reduced cost); the leaving row resolves ratio-test ties
    lexicographically. Returns ("optimal", iterations, None) or
    ("unbounded", iterations, entering_index).
    """
    iterations = 0
    while True:
        reduced = tab[cost_row, :-1]
        candidates = np.nonzero(eligible & (reduced < -tol))[0]
        if candidates.size == 0:
            return "optimal", iterations, None
        enter = int(candidates[0])  # Bland: lowest index
        col = tab[:n_rows, enter]
        rows = np.nonzero(col > tol)[0]
        if rows.size == 0:
            return "unbounded", iterations, enter
        ratios = tab[rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + tol * (1.0 + abs(best))]
        leave = _lexico_leave(tab, tied, tab[:n_rows, enter], tol) if tied.size > 1 \
            else int(tied[0])
        _pivot(tab, basis, leave, enter)
        iterations += 1
        if iterations > max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} pivots; tolerances too tight?")


def solve_standard_form(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                        tol: float = FEASIBILITY_TOL,
                        max_iter: Optional[int] = None) -> SimplexResult:
    """Two-phase simplex on min c@x s.t. a@x = b, x >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = a.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 10_000

    # normalize to b >= 0
    a = a.copy()
    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0

    unit_cols = _find_unit_columns(a)
    # a unit column only seeds the basis for one row and needs b>=0 (always true now)
    art_rows = [r for r in range(m) if r not in unit_cols]
    n_art = len(art_rows)
    n_total = n + n_art

    # tableau: m constraint rows, then phase-2 cost row, then phase-1 cost row
    tab = np.zeros((m + 2, n_total + 1))
    tab[:m, :n] = a
    tab[:m, -1] = b
    for k, r in enumerate(art_rows):
        tab[r, n + k] = 1.0
    tab[m, :n] = c

    basis = np.empty(m, dtype=int)
    for r in range(m):
        basis[r] = unit_cols[r] if r in unit_cols else n + art_rows.index(r)

    # phase-1 objective: sum of artificials, expressed in reduced form
    tab[m + 1, n:n_total] = 1.0
    for r in art_rows:
        tab[m + 1] -= tab[r]
    # make cost rows consistent with the starting basis for phase 2 as well
    for r in range(m):
        if basis[r] < n and tab[m, basis[r]] != 0.0:
            tab[m] -= tab[m, basis[r]] * tab[r]

    total_iters = 0
    if n_art > 0:
        eligible = np.ones(n_total, dtype=bool)
        status, iters, _ = _run_phase(tab, basis, m + 1, m, eligible, tol, max_iter)
        total_iters += iters
        if status == "unbounded":
            raise RuntimeError(
                "phase 1 signalled an unbounded direction, which is impossible; "
                "numerical breakdown in the tableau"
            )
        phase1_obj = -tab[m + 1, -1]
        if phase1_obj > tol * max(1.0, abs(b).max()):
            # name a row whose artificial is stuck at a positive level
            bad_row = None
            for r in range(m):
                if basis[r] >= n and tab[r, -1] > tol:
                    bad_row = r
                    break
            return SimplexResult(
                status="infeasible", infeasible_row=bad_row,
                phase1_objective=float(phase1_obj), iterations=total_iters,
            )
        # drive any remaining basic artificials (at zero level) out of the basis
        for r in range(m):
            if basis[r] >= n:
                pivots = np.nonzero(np.abs(tab[r, :n]) > tol)[0]
                if pivots.size:
                    _pivot(tab, basis, r, int(pivots[0]))
                    total_iters += 1
                # else: redundant row; harmless to leave the artificial at zero

    eligible = np.zeros(n_total, dtype=bool)
    eligible[:n] = True
    status, iters, enter = _run_phase(tab, basis, m, m, eligible, OPTIMALITY_TOL, max_iter)
    total_iters += iters
    if status == "unbounded":
        return SimplexResult(status="unbounded", unbounded_var=int(enter),
                             iterations=total_iters)

    x = np.zeros(n)
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = tab[r, -1]
    obj = float(c @ x)

    # equality-row multipliers, read off each row's seed column: a column that
    # started as the +1 unit vector of row r has reduced cost c_j - y_r (cost 0
    # for artificials), in the sign convention of the possibly flipped row
    y = np.zeros(m)
    for r in range(m):
        if r in unit_cols:
            col = unit_cols[r]
            y[r] = c[col] - tab[m, col]
        else:
            col = n + art_rows.index(r)
            y[r] = -tab[m, col]
    y[neg] *= -1.0
    return SimplexResult(status="optimal", x=x, objective=obj,
                         basis=basis.copy(), duals=y, iterations=total_iters)
