"""Branch-and-bound over binary variables on top of an LP relaxation oracle.

Best-bound node selection (ties broken by creation order, so runs are
deterministic). When the LP point rounds to a point that satisfies every
row, the rounded point is offered as an incumbent and the node closes if it
also matches the node bound; otherwise the most fractional binary (taken
from the rows the rounding breaks, if any) is branched on. A diving heuristic
supplies incumbents early. No cuts.
"""
from __future__ import annotations

import heapq
import itertools
from typing import Protocol

import numpy as np

from .model import (DEFAULT_TOLERANCES, INFEASIBLE, ITERATION_LIMIT, OPTIMAL, ModelSpec, Solution,
                    Tolerances)
from .simplex import solve_lp


class LpOracle(Protocol):
    """Solves the LP relaxation of a fixed model under changed column bounds."""

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> Solution: ...


class InternalLp:
    def __init__(self, model: ModelSpec, tol: Tolerances = DEFAULT_TOLERANCES):
        self.model = model
        self.tol = tol

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> Solution:
        return solve_lp(self.model.with_bounds(lb, ub), self.tol)


class _Rounder:
    """Row-aware rounding of binaries at a fixed continuous point."""

    def __init__(self, model: ModelSpec, tol: Tolerances):
        self.model = model
        self.tol = tol
        self.bins = np.flatnonzero(model.binary)
        self.lo, self.hi = model.row_bounds()
        self.A = model.A.tocsr()
        cols = model.A.tocsc()[:, self.bins]
        self.cols = [(cols.indices[cols.indptr[k]:cols.indptr[k + 1]],
                      cols.data[cols.indptr[k]:cols.indptr[k + 1]]) for k in range(len(self.bins))]

    def side_violations(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row violation caused by setting each binary to 0 or 1, everything else as in ``x``."""
        act = self.A @ x
        v = np.zeros((2, len(self.bins)))
        for k, j in enumerate(self.bins):
            rows, a = self.cols[k]
            if rows.size == 0:
                continue
            rest = act[rows] - a * x[j]
            for side in (0, 1):
                r = rest + a * side
                v[side, k] = np.sum(np.maximum(r - self.hi[rows], 0.0) + np.maximum(self.lo[rows] - r, 0.0))
        return v[0], v[1]

    def most_fractional(self, x: np.ndarray) -> int:
        frac = np.abs(x[self.bins] - np.round(x[self.bins]))
        k = int(np.argmax(frac))
        return int(self.bins[k]) if frac[k] > self.tol.int_tol else -1

    def round(self, x: np.ndarray) -> tuple[np.ndarray | None, int]:
        """Rounded copy of ``x`` if it satisfies every row, else ``(None, branching index)``."""
        feas = self.tol.feas_tol
        xb = x[self.bins]
        v0, v1 = self.side_violations(x)
        near = np.round(xb)
        pick = np.where(np.where(near > 0.5, v1, v0) <= feas, near,
                        np.where(np.where(near > 0.5, v0, v1) <= feas, 1.0 - near, near))
        xr = x.copy()
        xr[self.bins] = pick
        act = self.A @ xr
        bad = np.flatnonzero((act > self.hi + feas) | (act < self.lo - feas))
        if bad.size == 0:
            return xr, -1
        in_bad = np.zeros(self.model.n_vars, dtype=bool)
        for r in bad:
            in_bad[self.A.indices[self.A.indptr[r]:self.A.indptr[r + 1]]] = True
        cand = self.bins[in_bad[self.bins]]
        if cand.size == 0:
            cand = self.bins
        frac = np.abs(x[cand] - np.round(x[cand]))
        # ties resolve to the lowest index
        return None, int(cand[int(np.argmax(frac))])


def _dive(oracle: LpOracle, rounder: _Rounder, x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
          tol: Tolerances, max_rounds: int = 40) -> np.ndarray | None:
    """Fix binaries whose rows admit only one side (or the cheaper side), re-solve, repeat."""
    bins = rounder.bins
    lb, ub = lb.copy(), ub.copy()
    for _ in range(max_rounds):
        xr, _ = rounder.round(x)
        if xr is not None:
            return xr
        v0, v1 = rounder.side_violations(x)
        free = lb[bins] < ub[bins]
        ok0, ok1 = v0 <= tol.feas_tol, v1 <= tol.feas_tol
        to1 = free & ~ok0 & (ok1 | (v1 < v0))
        to0 = free & ~ok1 & ~to1
        if not (to0.any() or to1.any()):
            return None
        lb[bins[to1]] = ub[bins[to1]] = 1.0
        lb[bins[to0]] = ub[bins[to0]] = 0.0
        sol = oracle.solve(lb, ub)
        if sol.status != OPTIMAL:
            return None
        x = sol.values
    return None


def branch_and_bound(model: ModelSpec, oracle: LpOracle, tol: Tolerances = DEFAULT_TOLERANCES,
                     node_limit: int | None = None, rel_gap: float = 0.0, dive: bool = True) -> Solution:
    """Maximise ``model`` with binaries enforced.

    Stops when the best remaining bound is within ``max(gap_tol, rel_gap *
    |incumbent|)`` of the incumbent (status optimal) or after ``node_limit``
    nodes (status iteration_limit, incumbent and bound attached).
    """
    names = model.names
    limit = tol.max_nodes if node_limit is None else node_limit
    root = oracle.solve(model.lb, model.ub)
    if root.status != OPTIMAL:
        return root
    if not model.binary.any():
        return root
    rounder = _Rounder(model, tol)

    incumbent: np.ndarray | None = None
    best = -np.inf

    def offer(x: np.ndarray | None) -> None:
        nonlocal incumbent, best
        if x is None:
            return
        val = float(model.c @ x)
        if val > best:
            best, incumbent = val, x

    def slack() -> float:
        return max(tol.gap_tol, rel_gap * abs(best)) if np.isfinite(best) else tol.gap_tol

    counter = itertools.count()
    heap = [(-root.objective, next(counter), model.lb.copy(), model.ub.copy(), root.values)]
    nodes = 0
    iterations = root.iterations
    bound = root.objective
    while heap:
        neg, _, lb, ub, x = heapq.heappop(heap)
        bound = -neg
        if bound <= best + slack():
            heap.clear()
            break
        if nodes >= limit:
            heapq.heappush(heap, (neg, next(counter), lb, ub, x))
            break
        nodes += 1
        xr, j = rounder.round(x)
        if xr is not None:
            offer(xr)
            if float(model.c @ xr) >= bound - slack():
                continue
            # rounding cost objective: branch on the most fractional binary instead
            j = rounder.most_fractional(x)
            if j < 0:
                continue
        if dive:
            offer(_dive(oracle, rounder, x, lb, ub, tol))
            if bound <= best + slack():
                continue
        for side in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = side
            child = oracle.solve(clb, cub)
            iterations += child.iterations
            if child.status == OPTIMAL and child.objective > best + slack():
                heapq.heappush(heap, (-child.objective, next(counter), clb, cub, child.values))

    open_bound = max((-h[0] for h in heap), default=best)
    if incumbent is None:
        if heap:
            return Solution(ITERATION_LIMIT, names=names, iterations=iterations, nodes=nodes,
                            bound=open_bound, info={"reason": "node limit", "has_incumbent": False})
        return Solution(INFEASIBLE, names=names, iterations=iterations, nodes=nodes)
    bound = max(open_bound, best)
    info = {"gap": bound - best}
    if heap:
        info.update(reason="node limit", has_incumbent=True)
        return Solution(ITERATION_LIMIT, values=incumbent, objective=best, names=names,
                        iterations=iterations, nodes=nodes, bound=bound, info=info)
    return Solution(OPTIMAL, values=incumbent, objective=best, names=names, iterations=iterations,
                    nodes=nodes, bound=bound, info=info)


def solve_milp(model: ModelSpec, tol: Tolerances = DEFAULT_TOLERANCES) -> Solution:
    """Globally optimal within ``tol.gap_tol`` using the internal simplex for every node."""
    return branch_and_bound(model, InternalLp(model, tol), tol)


__all__ = ["InternalLp", "LpOracle", "branch_and_bound", "solve_milp"]
