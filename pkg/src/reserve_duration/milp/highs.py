"""Adapter running a :class:`ModelSpec` through the HiGHS solver bundled with SciPy."""
from __future__ import annotations

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import (DEFAULT_TOLERANCES, INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED,
                    ModelSpec, Solution, Tolerances)

_STATUS = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED, 4: ITERATION_LIMIT}


def solve_highs(model: ModelSpec, tol: Tolerances = DEFAULT_TOLERANCES, relax: bool = False) -> Solution:
    constraints = []
    if model.n_rows:
        lo, hi = model.row_bounds()
        constraints.append(LinearConstraint(model.A, lo, hi))
    integrality = np.zeros(model.n_vars) if relax else model.binary.astype(float)
    res = milp(
        -model.c,
        integrality=integrality,
        bounds=Bounds(model.lb, model.ub),
        constraints=constraints,
        options={"mip_rel_gap": 1e-9, "node_limit": tol.max_nodes, "presolve": True},
    )
    status = _STATUS.get(res.status, ITERATION_LIMIT)
    if status != OPTIMAL or res.x is None:
        return Solution(status, names=model.names, info={"message": res.message})
    x = np.asarray(res.x, dtype=float)
    if not relax:
        x[model.binary] = np.round(x[model.binary])
    return Solution(OPTIMAL, values=x, objective=float(model.c @ x), names=model.names,
                    nodes=int(getattr(res, "mip_node_count", 0) or 0),
                    bound=-float(getattr(res, "mip_dual_bound", -res.fun) or -res.fun))


_LP_STATUS = {
    "kOptimal": OPTIMAL,
    "kInfeasible": INFEASIBLE,
    "kUnbounded": UNBOUNDED,
    "kUnboundedOrInfeasible": INFEASIBLE,
}


class HighsLp:
    """Persistent HiGHS LP for one model; successive solves warm-start from the last basis.

    Only bounds change between solves (columns via :meth:`solve`, rows via
    :meth:`set_row_bounds`). Runs single-threaded, so a fixed sequence of
    calls gives identical results.
    """

    def __init__(self, model: ModelSpec, tol: Tolerances = DEFAULT_TOLERANCES):
        import highspy

        self._hs = highspy
        self.model = model
        self.tol = tol
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("primal_feasibility_tolerance", tol.feas_tol * 1e-1)
        h.setOptionValue("dual_feasibility_tolerance", tol.opt_tol)
        lp = highspy.HighsLp()
        lp.num_col_ = model.n_vars
        lp.num_row_ = model.n_rows
        lp.col_cost_ = -np.asarray(model.c, dtype=float)
        lp.col_lower_ = np.asarray(model.lb, dtype=float)
        lp.col_upper_ = np.asarray(model.ub, dtype=float)
        lo, hi = model.row_bounds()
        lp.row_lower_ = lo
        lp.row_upper_ = hi
        A = model.A.tocsc()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        h.passModel(lp)
        self._h = h
        self._lb = np.asarray(model.lb, dtype=float).copy()
        self._ub = np.asarray(model.ub, dtype=float).copy()
        self._rlo, self._rhi = lo.copy(), hi.copy()

    def set_row_bounds(self, lo: np.ndarray, hi: np.ndarray) -> None:
        changed = np.flatnonzero((lo != self._rlo) | (hi != self._rhi)).astype(np.int32)
        if changed.size:
            self._h.changeRowsBounds(changed.size, changed, lo[changed], hi[changed])
            self._rlo, self._rhi = lo.copy(), hi.copy()

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> Solution:
        changed = np.flatnonzero((lb != self._lb) | (ub != self._ub)).astype(np.int32)
        if changed.size:
            self._h.changeColsBounds(changed.size, changed, lb[changed], ub[changed])
            self._lb, self._ub = lb.copy(), ub.copy()
        self._h.run()
        status = self._h.getModelStatus()
        name = status.name if hasattr(status, "name") else str(status).split(".")[-1]
        code = _LP_STATUS.get(name, ITERATION_LIMIT)
        iters = int(self._h.getInfo().simplex_iteration_count)
        if code != OPTIMAL:
            return Solution(code, names=self.model.names, iterations=iters, info={"message": name})
        x = np.asarray(self._h.getSolution().col_value, dtype=float)
        return Solution(OPTIMAL, values=x, objective=float(self.model.c @ x), names=self.model.names,
                        iterations=iters)
