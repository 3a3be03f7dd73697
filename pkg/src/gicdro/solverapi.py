"""Backend-neutral linear model representation and solver entry points.

Models are assembled with :class:`ModelBuilder`, sealed into an immutable
:class:`ModelIR`, and handed to :func:`solve_milp` or
:func:`solve_lp_with_duals`.  The only built-in backend is HiGHS as shipped
with scipy; the backend is selected with the ``GICDRO_SOLVER`` environment
variable.
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

BACKEND_ENV = "GICDRO_SOLVER"
SUPPORTED_BACKENDS = ("highs",)

GE, LE, EQ = ">=", "<=", "="
_SENSES = (GE, LE, EQ)


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT = "TimeLimit"
    ERROR = "Error"


class BackendUnavailable(EnvironmentError):
    pass


class ContractError(ValueError):
    """Raised when a model is handed to an entry point that cannot accept it."""


def backend_name() -> str:
    name = os.environ.get(BACKEND_ENV, "highs").strip().lower()
    if name not in SUPPORTED_BACKENDS:
        raise BackendUnavailable(
            f"solver backend {name!r} is not available; expected one of "
            f"{', '.join(SUPPORTED_BACKENDS)} (set {BACKEND_ENV})"
        )
    return name


@dataclass(frozen=True)
class ModelIR:
    """Sealed linear model: ``min/max c.x + const`` over ``rows sense rhs``."""

    names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    A: sp.csr_matrix
    sense: tuple[str, ...]
    rhs: np.ndarray
    objective: np.ndarray
    obj_constant: float = 0.0
    maximize: bool = False
    row_names: tuple[str, ...] = ()
    row_tags: tuple[str, ...] = ()
    name: str = "model"

    def __post_init__(self):
        n = len(self.names)
        m = len(self.sense)
        if self.A.shape != (m, n):
            raise ContractError(f"constraint matrix is {self.A.shape}, expected {(m, n)}")
        for arr, label in ((self.lb, "lb"), (self.ub, "ub"), (self.binary, "binary"),
                           (self.objective, "objective")):
            if len(arr) != n:
                raise ContractError(f"{label} has length {len(arr)}, expected {n}")
        if len(self.rhs) != m:
            raise ContractError("rhs length does not match the number of rows")
        if not np.all(np.isfinite(self.rhs)):
            raise ContractError("rhs must be finite")
        if any(s not in _SENSES for s in self.sense):
            raise ContractError("unknown row sense")
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ContractError(f"variable {self.names[bad]} has lb > ub")

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.sense)

    @property
    def has_integrality(self) -> bool:
        return bool(np.any(self.binary))

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_bounds(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None) -> "ModelIR":
        return ModelIR(
            names=self.names,
            lb=self.lb if lb is None else np.asarray(lb, dtype=float),
            ub=self.ub if ub is None else np.asarray(ub, dtype=float),
            binary=self.binary, A=self.A, sense=self.sense, rhs=self.rhs,
            objective=self.objective, obj_constant=self.obj_constant,
            maximize=self.maximize, row_names=self.row_names,
            row_tags=self.row_tags, name=self.name,
        )

    def relaxed(self) -> "ModelIR":
        """Copy with integrality dropped (binaries become [lb, ub] continuous)."""
        return ModelIR(
            names=self.names, lb=self.lb, ub=self.ub,
            binary=np.zeros(self.n_vars, dtype=bool), A=self.A, sense=self.sense,
            rhs=self.rhs, objective=self.objective, obj_constant=self.obj_constant,
            maximize=self.maximize, row_names=self.row_names,
            row_tags=self.row_tags, name=self.name,
        )


class ModelBuilder:
    """Incremental assembly of a :class:`ModelIR` from sparse triplets."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._bin: list[bool] = []
        self._cost: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self._row_tags: list[str] = []
        self.obj_constant = 0.0
        self.maximize = False

    @property
    def n_vars(self) -> int:
        return len(self._names)

    @property
    def n_rows(self) -> int:
        return len(self._sense)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                binary: bool = False, cost: float = 0.0) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._bin.append(bool(binary))
        self._cost.append(float(cost))
        return len(self._names) - 1

    def set_cost(self, j: int, cost: float) -> None:
        self._cost[j] = float(cost)

    def add_row(self, coefs: Mapping[int, float] | Iterable[tuple[int, float]], sense: str,
                rhs: float, tag: str = "", name: str | None = None) -> int:
        if sense not in _SENSES:
            raise ContractError(f"unknown sense {sense!r}")
        i = len(self._sense)
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        for j, v in items:
            if v != 0.0:
                self._rows.append(i)
                self._cols.append(int(j))
                self._vals.append(float(v))
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        self._row_tags.append(tag)
        self._row_names.append(name if name is not None else f"r{i}")
        return i

    def build(self) -> ModelIR:
        n, m = len(self._names), len(self._sense)
        A = sp.csr_matrix((self._vals, (self._rows, self._cols)), shape=(m, n))
        A.sum_duplicates()
        return ModelIR(
            names=tuple(self._names),
            lb=np.array(self._lb, dtype=float),
            ub=np.array(self._ub, dtype=float),
            binary=np.array(self._bin, dtype=bool),
            A=A,
            sense=tuple(self._sense),
            rhs=np.array(self._rhs, dtype=float),
            objective=np.array(self._cost, dtype=float),
            obj_constant=self.obj_constant,
            maximize=self.maximize,
            row_names=tuple(self._row_names),
            row_tags=tuple(self._row_tags),
            name=self.name,
        )


@dataclass
class SolveResult:
    status: Status
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    lower_duals: np.ndarray | None = None
    upper_duals: np.ndarray | None = None
    gap: float = math.nan
    bound: float = math.nan
    wall_time: float = 0.0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def has_solution(self) -> bool:
        return self.x is not None


def _row_bounds(m: ModelIR) -> tuple[np.ndarray, np.ndarray]:
    sense = np.array(m.sense)
    lo = np.where(sense == LE, -np.inf, m.rhs)
    hi = np.where(sense == GE, np.inf, m.rhs)
    return lo, hi


def solve_milp(m: ModelIR, time_limit: float | None = None,
               mip_rel_gap: float = 1e-6) -> SolveResult:
    """Solve a mixed-binary linear model.

    A ``TimeLimit`` result carries the incumbent (when one was found), the
    best dual bound and the relative gap, mirroring what a timed-out run of
    a commercial MIP code reports.
    """
    backend_name()
    t0 = time.perf_counter()
    sign = -1.0 if m.maximize else 1.0
    lo, hi = _row_bounds(m)
    constraints = [LinearConstraint(m.A, lo, hi)] if m.n_rows else []
    options = {"disp": False, "mip_rel_gap": mip_rel_gap}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(
        c=sign * m.objective,
        integrality=m.binary.astype(int),
        bounds=Bounds(m.lb, m.ub),
        constraints=constraints,
        options=options,
    )
    wall = time.perf_counter() - t0
    x = None if res.x is None else np.asarray(res.x, dtype=float)
    obj = math.nan if x is None else float(m.objective @ x + m.obj_constant)
    dual_bound = getattr(res, "mip_dual_bound", None)
    bound = math.nan if dual_bound is None else sign * float(dual_bound) + m.obj_constant
    gap = getattr(res, "mip_gap", None)
    gap = 0.0 if gap is None and res.status == 0 else (math.nan if gap is None else max(0.0, float(gap)))
    if res.status == 0:
        status = Status.OPTIMAL
        if not m.has_integrality:
            gap, bound = 0.0, obj
    elif res.status == 1:
        status = Status.TIME_LIMIT
    elif res.status == 3:
        status = Status.UNBOUNDED
    elif res.status == 2 or "unbounded" in str(res.message).lower():
        status = _infeasible_or_unbounded(m, str(res.message))
    else:
        status = Status.ERROR
    return SolveResult(status=status, objective=obj, x=x, gap=gap, bound=bound,
                       wall_time=wall, message=str(res.message))


def _infeasible_or_unbounded(m: ModelIR, message: str) -> Status:
    # HiGHS may report "infeasible or unbounded" for MIPs; the LP relaxation settles it.
    if "unbounded" not in message.lower():
        return Status.INFEASIBLE
    # Feasibility of the zero-objective relaxation separates the two cases
    # (exact for the models built here, whose binaries only gate continuous parts).
    probe = ModelIR(names=m.names, lb=m.lb, ub=m.ub, binary=m.binary, A=m.A,
                    sense=m.sense, rhs=m.rhs, objective=np.zeros(m.n_vars), name=m.name)
    res = milp(c=probe.objective, integrality=m.binary.astype(int),
               bounds=Bounds(m.lb, m.ub),
               constraints=[LinearConstraint(m.A, *_row_bounds(m))] if m.n_rows else [],
               options={"disp": False})
    return Status.UNBOUNDED if res.status == 0 else Status.INFEASIBLE


def _linprog(m: ModelIR, time_limit: float | None):
    sense = np.array(m.sense)
    A = m.A.tocsr()
    ge, le, eq = sense == GE, sense == LE, sense == EQ
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([m.rhs[le], -m.rhs[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = m.rhs[eq] if eq.any() else None
    sign = -1.0 if m.maximize else 1.0
    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    bounds = np.column_stack([m.lb, m.ub]) if m.n_vars else None
    return linprog(sign * m.objective, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                   bounds=bounds, method="highs", options=options)


def solve_lp_with_duals(m: ModelIR, time_limit: float | None = None) -> SolveResult:
    """Solve a continuous model and return primal values and row duals.

    Row duals are reported as the sensitivity of the optimal objective to the
    row right-hand side, in the model's own objective sense.  Bound duals are
    reported the same way with respect to each finite variable bound, so that
    ``objective == rhs.duals + lb.lower_duals + ub.upper_duals + constant``.
    """
    backend_name()
    if m.has_integrality:
        raise ContractError("solve_lp_with_duals requires a model without binaries")
    t0 = time.perf_counter()
    res = _linprog(m, time_limit)
    wall = time.perf_counter() - t0
    if res.status == 2:
        return SolveResult(Status.INFEASIBLE, wall_time=wall, message=str(res.message))
    if res.status == 3:
        return SolveResult(Status.UNBOUNDED, wall_time=wall, message=str(res.message))
    if res.status == 1:
        return SolveResult(Status.TIME_LIMIT, wall_time=wall, message=str(res.message))
    if res.status != 0:
        return SolveResult(Status.ERROR, wall_time=wall, message=str(res.message))

    sign = -1.0 if m.maximize else 1.0
    sense = np.array(m.sense)
    ge, le, eq = sense == GE, sense == LE, sense == EQ
    duals = np.zeros(m.n_rows)
    ineq = np.asarray(res.ineqlin.marginals) if (le.any() or ge.any()) else np.zeros(0)
    n_le = int(le.sum())
    duals[le] = ineq[:n_le]
    duals[ge] = -ineq[n_le:]
    if eq.any():
        duals[eq] = np.asarray(res.eqlin.marginals)
    duals *= sign
    lower = sign * np.asarray(res.lower.marginals, dtype=float)
    upper = sign * np.asarray(res.upper.marginals, dtype=float)
    x = np.asarray(res.x, dtype=float)
    obj = float(m.objective @ x + m.obj_constant)
    return SolveResult(Status.OPTIMAL, objective=obj, x=x, duals=duals,
                       lower_duals=lower, upper_duals=upper, gap=0.0, bound=obj,
                       wall_time=wall, message=str(res.message))


def dual_objective(m: ModelIR, r: SolveResult) -> float:
    """Objective of the LP dual assembled from the duals in ``r``."""
    val = float(m.rhs @ r.duals) + m.obj_constant
    fin_lb = np.isfinite(m.lb)
    fin_ub = np.isfinite(m.ub)
    val += float(m.lb[fin_lb] @ r.lower_duals[fin_lb])
    val += float(m.ub[fin_ub] @ r.upper_duals[fin_ub])
    return val


_LP_NAME_OK = re.compile(r"[^A-Za-z0-9_.]")


def _lp_name(name: str) -> str:
    s = _LP_NAME_OK.sub("_", name)
    if not s or s[0].isdigit() or s[0] == ".":
        s = "v_" + s
    return s


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _terms(idx: Sequence[int], vals: Sequence[float], names: Sequence[str]) -> str:
    parts = []
    for j, v in zip(idx, vals):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_num(abs(v))} {names[j]}")
    return " ".join(parts) if parts else "0"


def emit_model_text(m: ModelIR) -> str:
    """CPLEX-LP style text of ``m``; byte-stable for identical models."""
    names = [_lp_name(n) for n in m.names]
    out = [f"\\ Model: {m.name}",
           f"\\ Variables: {m.n_vars}  Rows: {m.n_rows}",
           "Maximize" if m.maximize else "Minimize"]
    obj_idx = np.flatnonzero(m.objective)
    line = " obj: " + _terms(obj_idx, m.objective[obj_idx], names)
    if m.obj_constant:
        line += f" + {_num(m.obj_constant)} constant"
    out.append(line)
    out.append("Subject To")
    A = m.A.tocsr()
    A.sort_indices()
    for i in range(m.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        tag = m.row_tags[i] if m.row_tags else ""
        if tag:
            out.append(f"\\ {tag}")
        rname = _lp_name(m.row_names[i]) if m.row_names else f"r{i}"
        out.append(f" {rname}: {_terms(A.indices[lo:hi], A.data[lo:hi], names)} "
                   f"{m.sense[i]} {_num(m.rhs[i])}")
    out.append("Bounds")
    for j, nm in enumerate(names):
        lb, ub = m.lb[j], m.ub[j]
        if m.binary[j]:
            continue
        if np.isneginf(lb) and np.isposinf(ub):
            out.append(f" {nm} free")
        elif np.isposinf(ub):
            out.append(f" {nm} >= {_num(lb)}")
        elif np.isneginf(lb):
            out.append(f" -inf <= {nm} <= {_num(ub)}")
        else:
            out.append(f" {_num(lb)} <= {nm} <= {_num(ub)}")
    out.append("Binaries")
    bins = [names[j] for j in np.flatnonzero(m.binary)]
    if bins:
        out.append(" " + " ".join(bins))
    out.append("End")
    return "\n".join(out) + "\n"
