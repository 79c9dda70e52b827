"""Bounded-variable revised primal simplex.

Every row ``lo <= A_i x <= hi`` gets a logical variable ``s_i = A_i x`` with
bounds ``[lo, hi]``, so the working system is ``[A, -I] z = 0`` over box
bounded ``z``. Rows whose logical cannot start inside its box receive an
artificial column; phase 1 drives the artificials to zero, phase 2
optimizes the real objective with the artificials pinned at zero.

The basis inverse is held explicitly, updated by elementary row operations
and rebuilt from scratch every ``Tolerances.refactor_every`` pivots. Pricing
is Dantzig's rule, switching to Bland's rule after ``stall_limit``
consecutive degenerate pivots.
"""
from __future__ import annotations

import numpy as np

from .model import (DEFAULT_TOLERANCES, INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED,
                    ModelSpec, Solution, Tolerances)


class _Tableau:
    def __init__(self, M: np.ndarray, lb: np.ndarray, ub: np.ndarray, basis: np.ndarray,
                 x: np.ndarray, tol: Tolerances):
        self.M = M
        self.lb = lb
        self.ub = ub
        self.basis = basis
        self.x = x
        self.tol = tol
        self.is_basic = np.zeros(M.shape[1], dtype=bool)
        self.is_basic[basis] = True
        self.iterations = 0
        self.refactor()

    def refactor(self) -> None:
        B = self.M[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nonbasic = ~self.is_basic
        rhs = -self.M[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self._since_refactor = 0

    def run(self, c: np.ndarray, max_iter: int) -> str:
        tol = self.tol
        degenerate_run = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            y = c[self.basis] @ self.Binv
            d = c - y @ self.M
            q, direction = self._price(d, bland)
            if q < 0:
                return OPTIMAL
            alpha = self.Binv @ self.M[:, q]
            beta = direction * alpha
            theta, leave, leave_to_lb = self._ratio(q, beta, bland)
            if not np.isfinite(theta):
                return UNBOUNDED
            self.iterations += 1
            if theta <= tol.pivot_tol:
                degenerate_run += 1
                if degenerate_run > tol.stall_limit:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            self.x[self.basis] -= theta * beta
            self.x[q] += direction * theta
            if leave < 0:
                # bound flip of the entering variable
                self.x[q] = self.ub[q] if direction > 0 else self.lb[q]
                continue
            out = self.basis[leave]
            self.x[out] = self.lb[out] if leave_to_lb else self.ub[out]
            self._pivot(leave, q, alpha)
            self.basis[leave] = q
            self.is_basic[out] = False
            self.is_basic[q] = True
            self._since_refactor += 1
            if self._since_refactor >= tol.refactor_every:
                self.refactor()

    def _price(self, d: np.ndarray, bland: bool) -> tuple[int, int]:
        tol = self.tol.opt_tol
        nb = ~self.is_basic
        movable = self.ub > self.lb
        up = nb & movable & (d > tol) & (self.x < self.ub - 1e-12)
        down = nb & movable & (d < -tol) & (self.x > self.lb + 1e-12)
        score = np.where(up, d, 0.0) + np.where(down, -d, 0.0)
        candidates = np.flatnonzero(score > 0)
        if candidates.size == 0:
            return -1, 0
        q = int(candidates[0]) if bland else int(candidates[np.argmax(score[candidates])])
        return q, (1 if up[q] else -1)

    def _ratio(self, q: int, beta: np.ndarray, bland: bool) -> tuple[float, int, bool]:
        ptol = self.tol.pivot_tol
        xb = self.x[self.basis]
        lb = self.lb[self.basis]
        ub = self.ub[self.basis]
        theta = np.full(beta.shape, np.inf)
        dec = beta > ptol
        inc = beta < -ptol
        with np.errstate(invalid="ignore"):
            theta[dec] = (xb[dec] - lb[dec]) / beta[dec]
            theta[inc] = (ub[inc] - xb[inc]) / -beta[inc]
        theta = np.maximum(theta, 0.0)
        flip = self.ub[q] - self.lb[q]
        best = float(theta.min()) if theta.size else np.inf
        if flip <= best:
            return float(flip), -1, False
        if not np.isfinite(best):
            return np.inf, -1, False
        ties = np.flatnonzero(theta <= best + 1e-12)
        if bland:
            leave = int(ties[np.argmin(self.basis[ties])])
        else:
            leave = int(ties[np.argmax(np.abs(beta[ties]))])
        return best, leave, bool(beta[leave] > 0)

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row


def solve_lp(model: ModelSpec, tol: Tolerances = DEFAULT_TOLERANCES) -> Solution:
    """Solve the LP relaxation of ``model`` (binaries treated as [0, 1])."""
    n, m = model.n_vars, model.n_rows
    names = model.names
    lb0 = model.lb.astype(float)
    ub0 = model.ub.astype(float)
    if np.any(lb0 > ub0 + tol.feas_tol):
        return Solution(INFEASIBLE, names=names)
    if m == 0:
        return _solve_box(model)

    A = model.A.toarray()
    row_lo, row_hi = model.row_bounds()

    x0 = np.where(np.isfinite(lb0), lb0, np.where(np.isfinite(ub0), ub0, 0.0))
    act = A @ x0
    s0 = np.clip(act, row_lo, row_hi)
    gap = s0 - act
    needs_art = np.abs(gap) > 0.0
    art_rows = np.flatnonzero(needs_art)
    k = art_rows.size

    M = np.zeros((m, n + m + k))
    M[:, :n] = A
    M[:, n:n + m] = -np.eye(m)
    # artificial a_i >= 0 with A_i x - s_i + sign_i a_i = 0
    for j, i in enumerate(art_rows):
        M[i, n + m + j] = np.sign(gap[i])
    lb = np.concatenate([lb0, row_lo, np.zeros(k)])
    ub = np.concatenate([ub0, row_hi, np.full(k, np.inf)])
    x = np.concatenate([x0, s0, np.abs(gap[art_rows])])
    basis = np.arange(n, n + m)
    basis[art_rows] = n + m + np.arange(k)

    tab = _Tableau(M, lb, ub, basis, x, tol)
    if k:
        c1 = np.zeros(n + m + k)
        c1[n + m:] = -1.0
        status = tab.run(c1, tol.max_iter)
        if status == ITERATION_LIMIT:
            return Solution(ITERATION_LIMIT, names=names, iterations=tab.iterations)
        tab.refactor()
        if tab.x[n + m:].sum() > tol.feas_tol:
            return Solution(INFEASIBLE, names=names, iterations=tab.iterations)
        tab.ub[n + m:] = 0.0
        nb_art = ~tab.is_basic[n + m:]
        tab.x[n + m:][nb_art] = 0.0
        tab.refactor()

    c2 = np.zeros(n + m + k)
    c2[:n] = model.c
    status = tab.run(c2, tol.max_iter)
    if status != OPTIMAL:
        return Solution(status, names=names, iterations=tab.iterations)
    tab.refactor()
    values = tab.x[:n].copy()
    # snap values sitting within tolerance of a bound onto it
    values = np.where(np.abs(values - lb0) <= tol.feas_tol * 1e-3, lb0, values)
    values = np.where(np.abs(values - ub0) <= tol.feas_tol * 1e-3, ub0, values)
    if model.max_violation(values) > tol.feas_tol:
        return Solution(ITERATION_LIMIT, names=names, iterations=tab.iterations,
                        info={"reason": "numerical trouble: final point violates feasibility"})
    return Solution(OPTIMAL, values=values, objective=float(model.c @ values), names=names,
                    iterations=tab.iterations, bound=float(model.c @ values))


def _solve_box(model: ModelSpec) -> Solution:
    c = model.c
    if np.any((c > 0) & np.isposinf(model.ub)) or np.any((c < 0) & np.isneginf(model.lb)):
        return Solution(UNBOUNDED, names=model.names)
    x = np.where(c > 0, model.ub, np.where(c < 0, model.lb,
                 np.where(np.isfinite(model.lb), model.lb, np.where(np.isfinite(model.ub), model.ub, 0.0))))
    obj = float(c @ x)
    return Solution(OPTIMAL, values=x.astype(float), objective=obj, names=model.names, bound=obj)
