"""Linear and mixed-integer programming kernel.

``solve`` dispatches to a named backend: ``"internal"`` (the pure-NumPy
simplex and branch-and-bound in this package) or ``"highs"`` (the HiGHS
MIP solver bundled with SciPy). Both honour the same :class:`ModelSpec` /
:class:`Solution` contract. :func:`branch_and_bound` runs the package's
tree search over any LP oracle, e.g. a warm-started :class:`HighsLp`.
"""
from __future__ import annotations

from .bnb import InternalLp, LpOracle, branch_and_bound, solve_milp
from .highs import HighsLp, solve_highs
from .model import (DEFAULT_TOLERANCES, EQ, GE, INFEASIBLE, ITERATION_LIMIT, LE, OPTIMAL,
                    UNBOUNDED, ModelBuilder, ModelError, ModelSpec, Solution, Tolerances,
                    from_dense, to_lp_format)
from .simplex import solve_lp

BACKENDS = ("internal", "highs")


def solve(model: ModelSpec, backend: str = "internal", tol: Tolerances = DEFAULT_TOLERANCES) -> Solution:
    if backend == "internal":
        return solve_milp(model, tol)
    if backend == "highs":
        return solve_highs(model, tol)
    raise ValueError(f"unknown solver backend {backend!r}; expected one of {BACKENDS}")


__all__ = [
    "BACKENDS", "DEFAULT_TOLERANCES", "HighsLp", "InternalLp", "LpOracle", "branch_and_bound", "EQ", "GE", "INFEASIBLE", "ITERATION_LIMIT", "LE", "OPTIMAL",
    "UNBOUNDED", "ModelBuilder", "ModelError", "ModelSpec", "Solution", "Tolerances", "from_dense",
    "solve", "solve_highs", "solve_lp", "solve_milp", "to_lp_format",
]
