"""Dense two-phase simplex for small linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq`` and
``x >= 0`` on a full tableau.  Entering columns follow Dantzig's rule until a
run of degenerate pivots, after which Bland's rule takes over so the method
cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPError(RuntimeError):
    pass


class InfeasibleLP(LPError):
    pass


class UnboundedLP(LPError):
    pass


class IterationLimit(LPError):
    """Raised when the pivot budget runs out; no partial point is returned."""


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    nit: int


class _Tableau:
    def __init__(self, table: np.ndarray, basis: np.ndarray, tol: float, max_iter: int,
                 degenerate_limit: int):
        self.t = table
        self.basis = basis
        self.tol = tol
        self.max_iter = max_iter
        self.degenerate_limit = degenerate_limit
        self.nit = 0

    def pivot(self, row: int, col: int) -> None:
        t = self.t
        t[row] /= t[row, col]
        factor = t[:, col].copy()
        factor[row] = 0.0
        nz = np.flatnonzero(factor)
        if nz.size:
            t[nz] -= np.outer(factor[nz], t[row])
        self.basis[row] = col

    def run(self, allowed: np.ndarray) -> None:
        t, tol = self.t, self.tol
        bland = False
        degenerate_run = 0
        while True:
            cost = t[-1, :-1]
            candidates = np.flatnonzero((cost < -tol) & allowed)
            if candidates.size == 0:
                return
            if self.nit >= self.max_iter:
                raise IterationLimit(f"simplex stopped after {self.nit} pivots")
            if bland:
                col = int(candidates[0])
            else:
                col = int(candidates[np.argmin(cost[candidates])])
            column = t[:-1, col]
            pos = np.flatnonzero(column > tol)
            if pos.size == 0:
                raise UnboundedLP("objective is unbounded below")
            ratios = t[pos, -1] / column[pos]
            best = ratios.min()
            ties = pos[ratios <= best + tol * max(1.0, abs(best))]
            # Bland's leaving rule: smallest basic variable index among ties
            row = int(ties[np.argmin(self.basis[ties])])
            if best <= tol:
                degenerate_run += 1
                if degenerate_run >= self.degenerate_limit:
                    bland = True
            else:
                degenerate_run = 0
            self.pivot(row, col)
            self.nit += 1


def linprog_simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-9,
                    max_iter: int = 100_000, degenerate_limit: int = 50) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq
    if A_ub.shape != (m_ub, n) or A_eq.shape != (m_eq, n):
        raise ValueError("constraint matrix shapes do not match c and b")

    # columns: x (n) | slacks (m_ub) | artificials (n_art) | rhs
    A = np.vstack([A_ub, A_eq])
    b = np.concatenate([b_ub, b_eq])
    slack_sign = np.concatenate([np.ones(m_ub), np.zeros(m_eq)])
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    slack_sign[flip] *= -1
    needs_art = slack_sign <= 0  # equality rows and flipped inequality rows
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    width = n + m_ub + n_art
    t = np.zeros((m + 1, width + 1))
    t[:m, :n] = A
    t[np.arange(m_ub), n + np.arange(m_ub)] = slack_sign[:m_ub]
    t[art_rows, n + m_ub + np.arange(n_art)] = 1.0
    t[:m, -1] = b
    basis = np.empty(m, dtype=np.int64)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = n + m_ub + np.arange(n_art)

    tab = _Tableau(t, basis, tol, max_iter, degenerate_limit)
    allowed = np.ones(width, dtype=bool)

    if n_art:
        t[-1, :] = -t[art_rows].sum(axis=0)
        t[-1, n + m_ub:width] = 0.0
        tab.run(allowed)
        if -t[-1, -1] > tol * max(1.0, np.abs(b).max()) * 10:
            raise InfeasibleLP(f"phase one ended with infeasibility {-t[-1, -1]:.3g}")
        art_start = n + m_ub
        keep = np.ones(m, dtype=bool)
        for r in np.flatnonzero(basis >= art_start):
            row = t[r, :art_start]
            cand = np.flatnonzero(np.abs(row) > tol)
            if cand.size:
                tab.pivot(r, int(cand[0]))
            else:
                keep[r] = False  # redundant constraint
        if not keep.all():
            t = np.vstack([t[:-1][keep], t[-1:]])
            basis = basis[keep]
            tab.t, tab.basis = t, basis
        allowed[art_start:] = False
        t[:-1, art_start:width] = 0.0

    t[-1, :] = 0.0
    t[-1, :n] = c
    cb = np.zeros(width)
    cb[:n] = c
    coef = cb[basis]
    nz = np.flatnonzero(coef)
    if nz.size:
        t[-1] -= coef[nz] @ t[nz]
    tab.run(allowed)

    x = np.zeros(width)
    x[basis] = t[:-1, -1]
    x = x[:n]
    return LPResult(x=x, fun=float(c @ x), nit=tab.nit)
