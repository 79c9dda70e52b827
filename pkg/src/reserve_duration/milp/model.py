"""Model container shared by every solver backend.

A :class:`ModelSpec` is an immutable, maximization-sense mixed-integer
linear program in row form::

    max  c @ x
    s.t. A[i] @ x  (<= | == | >=)  rhs[i]
         lb <= x <= ub,   x[j] in {0, 1} for binary j

:class:`ModelBuilder` is the mutable companion used by the constraint
emitters in :mod:`reserve_duration.grid` and :mod:`reserve_duration.ders`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "<=", "==", ">="
SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
STATUSES = (OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT)


class ModelError(ValueError):
    """Raised for malformed models (unknown variables, lb > ub, bad senses)."""


@dataclass(frozen=True)
class Tolerances:
    """Every numerical tolerance used by the solvers, in one place."""

    feas_tol: float = 1e-6
    opt_tol: float = 1e-7
    int_tol: float = 1e-6
    gap_tol: float = 1e-6
    pivot_tol: float = 1e-9
    max_iter: int = 50_000
    max_nodes: int = 20_000
    refactor_every: int = 50
    stall_limit: int = 30


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True, eq=False)
class ModelSpec:
    names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    A: sp.csr_matrix
    senses: tuple[str, ...]
    rhs: np.ndarray
    c: np.ndarray
    row_names: tuple[str, ...] = ()

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_binaries(self) -> int:
        return int(self.binary.sum())

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except AttributeError:
            object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})
            return self._index[name]

    def relaxed(self) -> "ModelSpec":
        """Copy with every binary relaxed to the continuous interval [lb, ub]."""
        return ModelSpec(self.names, self.lb, self.ub, np.zeros_like(self.binary),
                         self.A, self.senses, self.rhs, self.c, self.row_names)

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "ModelSpec":
        return ModelSpec(self.names, lb, ub, self.binary, self.A, self.senses,
                         self.rhs, self.c, self.row_names)

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows as ``lo <= A x <= hi`` (infinite on the open side)."""
        senses = np.asarray(self.senses)
        lo = np.where(senses == LE, -np.inf, self.rhs)
        hi = np.where(senses == GE, np.inf, self.rhs)
        return lo, hi

    def max_violation(self, x: np.ndarray) -> float:
        """Largest violation of any row or bound by the point ``x``."""
        x = np.asarray(x, dtype=float)
        viol = 0.0
        if self.n_rows:
            ax = self.A @ x
            lo, hi = self.row_bounds()
            viol = max(viol, float(np.max(np.maximum(lo - ax, ax - hi), initial=0.0)))
        viol = max(viol, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return viol


@dataclass
class Solution:
    status: str
    values: np.ndarray | None = None
    objective: float | None = None
    names: tuple[str, ...] = ()
    iterations: int = 0
    nodes: int = 0
    bound: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL

    def value(self, name: str) -> float:
        if self.values is None:
            raise ModelError(f"no values available (status={self.status})")
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        if self.values is None:
            return {}
        return {n: float(v) for n, v in zip(self.names, self.values)}


class ModelBuilder:
    """Incremental construction of a :class:`ModelSpec`.

    Variables are addressed by integer index; names are kept for dumps and
    for :meth:`Solution.value`. Linear expressions are ``{index: coef}``
    mappings or parallel ``(indices, coefs)`` sequences.
    """

    def __init__(self) -> None:
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._bin: list[bool] = []
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self._obj: dict[int, float] = {}
        self._name_set: set[str] = set()

    @property
    def n_vars(self) -> int:
        return len(self._names)

    @property
    def n_rows(self) -> int:
        return len(self._senses)

    def add_var(self, name: str, lb: float = 0.0, ub: float = np.inf, binary: bool = False) -> int:
        if name in self._name_set:
            raise ModelError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ModelError(f"variable {name!r} has lb {lb} > ub {ub}")
        self._name_set.add(name)
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._bin.append(bool(binary))
        return len(self._names) - 1

    def add_vars(self, prefix: str, n: int, lb=0.0, ub=np.inf, binary: bool = False,
                 offset: int = 0) -> np.ndarray:
        """Add ``n`` variables named ``prefix[offset]`` ... ``prefix[offset + n - 1]``."""
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        return np.array([self.add_var(f"{prefix}[{offset + k}]", lbs[k], ubs[k], binary)
                         for k in range(n)], dtype=int)

    def add_constraint(self, expr, sense: str, rhs: float, name: str = "") -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        idx, coef = _as_arrays(expr)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise ModelError(f"constraint {name!r} references an undeclared variable")
        row = self.n_rows
        keep = coef != 0.0
        self._rows.append(np.full(int(keep.sum()), row, dtype=int))
        self._cols.append(idx[keep])
        self._vals.append(coef[keep])
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"r{row}")
        return row

    def set_objective(self, expr) -> None:
        idx, coef = _as_arrays(expr)
        self._obj = {}
        for i, v in zip(idx.tolist(), coef.tolist()):
            self._obj[i] = self._obj.get(i, 0.0) + v

    def fix(self, index: int, value: float) -> None:
        self._lb[index] = self._ub[index] = float(value)

    def build(self) -> ModelSpec:
        n, m = self.n_vars, self.n_rows
        if m:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        A.sum_duplicates()
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] += v
        return ModelSpec(
            names=tuple(self._names),
            lb=np.array(self._lb, dtype=float),
            ub=np.array(self._ub, dtype=float),
            binary=np.array(self._bin, dtype=bool),
            A=A,
            senses=tuple(self._senses),
            rhs=np.array(self._rhs, dtype=float),
            c=c,
            row_names=tuple(self._row_names),
        )


def _as_arrays(expr) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(expr, Mapping):
        idx = np.fromiter(expr.keys(), dtype=int, count=len(expr))
        coef = np.fromiter(expr.values(), dtype=float, count=len(expr))
        return idx, coef
    idx, coef = expr
    idx = np.asarray(idx, dtype=int).ravel()
    coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).copy()
    return idx, coef


def from_dense(c: Sequence[float], A: Iterable[Sequence[float]], senses: Sequence[str],
               rhs: Sequence[float], lb=None, ub=None, binary=None) -> ModelSpec:
    """Build a ModelSpec from dense arrays (used by tests and small examples)."""
    c = np.asarray(c, dtype=float)
    n = c.size
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    binary = np.zeros(n, dtype=bool) if binary is None else np.asarray(binary, dtype=bool)
    mb = ModelBuilder()
    for j in range(n):
        mb.add_var(f"x{j}", lb[j], ub[j], bool(binary[j]))
    for row, s, b in zip(A, senses, rhs):
        mb.add_constraint((np.arange(n), np.asarray(row, dtype=float)), s, b)
    mb.set_objective((np.arange(n), c))
    return mb.build()


def to_lp_format(model: ModelSpec) -> str:
    """Render the model in CPLEX LP text format for cross-checking with external tools."""

    def term_list(cols, vals):
        parts = []
        for j, v in zip(cols, vals):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {abs(v):.12g} {_lp_name(model.names[j])}")
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else text

    lines = ["\\ reserve_duration model dump", "Maximize"]
    nz = np.flatnonzero(model.c)
    lines.append(" obj: " + (term_list(nz, model.c[nz]) if nz.size else "0"))
    lines.append("Subject To")
    A = model.A.tocsr()
    op = {LE: "<=", EQ: "=", GE: ">="}
    for i in range(model.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        body = term_list(A.indices[lo:hi], A.data[lo:hi]) if hi > lo else "0 " + _lp_name(model.names[0])
        name = _lp_name(model.row_names[i] if model.row_names else f"r{i}")
        lines.append(f" {name}: {body} {op[model.senses[i]]} {model.rhs[i]:.12g}")
    lines.append("Bounds")
    for j, name in enumerate(model.names):
        lo, hi = model.lb[j], model.ub[j]
        lo_s = "-inf" if np.isneginf(lo) else f"{lo:.12g}"
        hi_s = "+inf" if np.isposinf(hi) else f"{hi:.12g}"
        lines.append(f" {lo_s} <= {_lp_name(name)} <= {hi_s}")
    bins = [_lp_name(model.names[j]) for j in np.flatnonzero(model.binary)]
    if bins:
        lines.append("Binaries")
        lines.extend(f" {b}" for b in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"


def _lp_name(name: str) -> str:
    return name.replace("[", "(").replace("]", ")").replace(",", "_").replace(" ", "_")
