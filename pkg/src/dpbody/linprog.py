"""Dense two-phase simplex solver.

Solves  max  c.x  subject to  A x <= b  with x free, which is the only LP
shape the geometry layer needs (support functions and Chebyshev balls).
The solver is deliberately self-contained and deterministic: entering and
leaving variables follow Bland's smallest-index anti-cycling rule, so two
solves on structurally identical tableaus (e.g. the paired bodies used in
stability experiments) break ties the same way.

Free variables are split x = u - v with u, v >= 0 and slacks make the rows
equalities.  Rows with negative right-hand side get an artificial variable
and a phase-1 feasibility solve.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleError, UnboundedError

_TOL = 1e-9


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def _run_simplex(T: np.ndarray, basis: np.ndarray, n_rows: int,
                 allowed: int, tol: float, max_iter: int) -> None:
    """Minimize the cost row in-place.  ``allowed`` caps entering columns."""
    for _ in range(max_iter):
        reduced = T[-1, :allowed]
        negative = np.nonzero(reduced < -tol)[0]
        if negative.size == 0:
            return
        col = int(negative[0])  # Bland: smallest eligible index enters
        column = T[:n_rows, col]
        rows = np.nonzero(column > tol)[0]
        if rows.size == 0:
            raise UnboundedError("objective unbounded along entering column")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * (1.0 + abs(best))]
        row = int(ties[np.argmin(basis[ties])])  # Bland: smallest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    raise InfeasibleError("simplex failed to converge within iteration limit")


def simplex_maximize(c: np.ndarray, A: np.ndarray, b: np.ndarray,
                     tol: float = _TOL, max_iter: int = 50_000):
    """Maximize ``c.x`` over ``{x : A x <= b}``.

    Returns ``(x, value)`` at an optimal basic point.

    Raises
    ------
    UnboundedError   if the objective is unbounded over the region.
    InfeasibleError  if the region is empty.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    m, d = A.shape
    if b.shape[0] != m or c.shape[0] != d:
        raise ValueError("inconsistent LP shapes")

    # Columns: u (d), v (d), slacks (m), then artificials as needed.
    body = np.hstack([A, -A, np.eye(m)])
    rhs = b.copy()
    flip = rhs < 0
    body[flip] *= -1.0
    rhs[flip] *= -1.0

    n_plain = 2 * d + m
    art_rows = np.nonzero(flip)[0]
    n_art = art_rows.size
    n_cols = n_plain + n_art

    T = np.zeros((m + 1, n_cols + 1))
    T[:m, :n_plain] = body
    T[:m, -1] = rhs
    basis = np.empty(m, dtype=int)
    basis[:] = 2 * d + np.arange(m)  # slacks
    for k, i in enumerate(art_rows):
        T[i, n_plain + k] = 1.0
        basis[i] = n_plain + k

    if n_art:
        # Phase 1: minimize the sum of artificials.
        T[-1, n_plain:n_cols] = 1.0
        T[-1] -= T[art_rows].sum(axis=0)
        _run_simplex(T, basis, m, n_cols, tol, max_iter)
        if -T[-1, -1] > np.sqrt(tol):
            raise InfeasibleError("constraint set is empty")
        # Pivot artificials out of the basis; rows that cannot pivot are
        # redundant and harmless (their artificial stays basic at zero),
        # but artificials must never re-enter, so phase 2 restricts columns.
        for i in range(m):
            if basis[i] >= n_plain:
                candidates = np.nonzero(np.abs(T[i, :n_plain]) > tol)[0]
                if candidates.size:
                    _pivot(T, i, int(candidates[0]))
                    basis[i] = int(candidates[0])

    # Phase 2: minimize -c.x.
    cost = np.zeros(n_cols)
    cost[:d] = -c
    cost[d:2 * d] = c
    T[-1, :-1] = cost
    T[-1, -1] = 0.0
    in_basis = basis[basis < n_cols]
    for i, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] -= cost[j] * T[i]
    del in_basis
    _run_simplex(T, basis, m, n_plain, tol, max_iter)

    z = np.zeros(n_cols)
    z[basis] = np.maximum(T[:m, -1], 0.0)
    x = z[:d] - z[d:2 * d]
    return x, float(c @ x)
