"""Dense revised primal simplex with Bland's rule and a two-phase start.

Solves ``min c @ x`` subject to row constraints ``A[r] @ x (sense) b[r]``
with senses ``"="``, ``"<="``, ``">="`` and ``x >= 0``. Intended for the
small, highly degenerate LPs produced by :mod:`dynfl.lp`; the basis inverse
is kept dense and refactorised periodically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class SimplexError(RuntimeError):
    pass


class InfeasibleError(SimplexError):
    pass


class UnboundedError(SimplexError):
    pass


class IterationLimitError(SimplexError):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    basis: np.ndarray
    iterations: int
    min_reduced_cost: float


class _Tableau:
    """Revised-simplex state over the standard-form system ``M @ v = rhs``."""

    def __init__(self, M, rhs, basis, tol, refactor_every=64):
        self.M = M
        self.rhs = rhs
        self.basis = np.array(basis, dtype=int)
        self.tol = tol
        self.refactor_every = refactor_every
        self.refactor()

    def refactor(self):
        self.B_inv = np.linalg.inv(self.M[:, self.basis])
        self.xB = self.B_inv @ self.rhs
        self.since_refactor = 0

    def run(self, cost, allowed, max_iter, start_iter=0):
        """Iterate to optimality for ``cost``; returns the iteration counter."""
        it = start_iter
        while True:
            cB = cost[self.basis]
            duals = cB @ self.B_inv
            red = cost - duals @ self.M
            red[self.basis] = 0.0
            cand = np.flatnonzero((red < -self.tol) & allowed)
            if cand.size == 0:
                self.reduced = red
                return it
            if it >= max_iter:
                raise IterationLimitError(f"simplex exceeded {max_iter} iterations")
            enter = int(cand[0])                       # Bland: lowest index
            col = self.B_inv @ self.M[:, enter]
            rows = np.flatnonzero(col > self.tol)
            if rows.size == 0:
                raise UnboundedError(f"column {enter} has no blocking row")
            xB = np.maximum(self.xB[rows], 0.0)
            ratios = xB / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + self.tol]
            leave = int(ties[np.argmin(self.basis[ties])])  # Bland: lowest basic index
            self.pivot(leave, enter, col)
            it += 1

    def pivot(self, r, enter, col=None):
        if col is None:
            col = self.B_inv @ self.M[:, enter]
        piv = col[r]
        self.B_inv[r] /= piv
        others = np.arange(len(col)) != r
        self.B_inv[others] -= np.outer(col[others], self.B_inv[r])
        self.basis[r] = enter
        self.since_refactor += 1
        if self.since_refactor >= self.refactor_every:
            self.refactor()
        else:
            self.xB = self.B_inv @ self.rhs


def solve_lp(c, A, senses, b, tol: float = 1e-9, max_iter: int | None = None) -> SimplexResult:
    """Two-phase revised simplex; raises on infeasible/unbounded/iteration limit."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    # standard form: structural | slack/surplus | artificial
    slack_rows = [r for r in range(m) if senses[r] != "="]
    n_slack = len(slack_rows)
    S = np.zeros((m, n_slack))
    for k, r in enumerate(slack_rows):
        S[r, k] = 1.0 if senses[r] == "<=" else -1.0
    M = np.hstack([A, S])
    rhs = b.copy()
    flip = rhs < 0
    M[flip] *= -1
    rhs[flip] *= -1

    basis = np.full(m, -1)
    for k, r in enumerate(slack_rows):
        if M[r, n + k] > 0:
            basis[r] = n + k
    need_art = np.flatnonzero(basis < 0)
    n_struct = n + n_slack
    art = np.zeros((m, len(need_art)))
    for k, r in enumerate(need_art):
        art[r, k] = 1.0
        basis[r] = n_struct + k
    M = np.hstack([M, art])
    n_total = M.shape[1]

    tab = _Tableau(M, rhs, basis, tol)
    it = 0
    if len(need_art):
        phase1 = np.zeros(n_total)
        phase1[n_struct:] = 1.0
        it = tab.run(phase1, np.ones(n_total, dtype=bool), max_iter)
        infeas = float(phase1[tab.basis] @ tab.xB)
        if infeas > tol * max(1.0, float(np.abs(rhs).max())) * 10:
            raise InfeasibleError(f"phase 1 ended with infeasibility {infeas:.3g}")
        tab = _drive_out_artificials(tab, n_struct, tol)
        M = tab.M
        n_total = M.shape[1]

    cost = np.zeros(n_total)
    cost[:n] = c
    allowed = np.zeros(n_total, dtype=bool)
    allowed[:n_struct] = True
    it = tab.run(cost, allowed, max_iter, start_iter=it)
    tab.refactor()
    v = np.zeros(n_total)
    v[tab.basis] = tab.xB
    x = v[:n].copy()
    x[np.abs(x) <= tol] = 0.0
    red = tab.reduced[:n_struct]
    log.debug("simplex finished in %d iterations", it)
    return SimplexResult(x=x, objective=float(c @ x), basis=tab.basis.copy(), iterations=it,
                         min_reduced_cost=float(red.min()) if red.size else 0.0)


def _drive_out_artificials(tab: _Tableau, n_struct: int, tol: float) -> _Tableau:
    """Pivot zero-level artificials out of the basis, dropping redundant rows."""
    keep = np.ones(len(tab.basis), dtype=bool)
    for r in range(len(tab.basis)):
        if tab.basis[r] < n_struct:
            continue
        row = tab.B_inv[r] @ tab.M[:, :n_struct]
        cand = np.flatnonzero(np.abs(row) > tol)
        cand = cand[~np.isin(cand, tab.basis)]
        if cand.size:
            tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
        else:
            keep[r] = False
    if not keep.all():
        log.debug("dropping %d redundant rows", int((~keep).sum()))
        rows = np.flatnonzero(keep)
        tab = _Tableau(tab.M[rows], tab.rhs[rows], tab.basis[rows], tab.tol)
    return tab
