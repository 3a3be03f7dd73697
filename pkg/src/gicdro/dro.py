"""Two-stage distributionally robust solver.

The moment-based worst case over distributions supported on the polytope
with vertex set ``K`` and mean ``mu`` is handled through its dual::

    min  a.y + mu.lam + eta
    s.t. eta >= H(y, w) - lam.w   for every vertex w in K

solved either monolithically (one recourse copy per vertex) or by
column-and-constraint generation, which adds one recourse copy per
iteration for the currently worst vertex.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .relax import RelaxConfig, StandardFormModel, build_standard_form
from .solverapi import EQ, GE, LE, ModelIR, Status, solve_lp_with_duals, solve_milp
from .uncertainty import SupportPolytope, gmd_params, hull_support, mean_in_hull, support_vertices

DEFAULT_EPS = 1e-4
DEFAULT_DUAL_BOUND = 1e4
DUAL_BOUND_RETRIES = 2
MAX_MODEL_NONZEROS = 50_000_000

log = logging.getLogger(__name__)


class MasterUnboundedError(RuntimeError):
    """The mean lies outside the convex hull of the scenario vertices."""


class IterationLimitError(RuntimeError):
    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


class SolverFailure(RuntimeError):
    pass


class ModelTooLarge(MemoryError):
    pass


class CaseMode(str, Enum):
    C0 = "c0"  # deterministic at the mean field
    C1 = "c1"  # full distributionally robust model
    C2 = "c2"  # switching and setpoints fixed from C0
    C3 = "c3"  # every element kept in service


@dataclass
class FirstStageDecision:
    z_g: dict[int, int]
    z_a: dict[int, int]
    rho: dict[int, float]
    lam: tuple[float, float] = (0.0, 0.0)
    eta: float = 0.0
    y: np.ndarray | None = field(default=None, repr=False)

    @property
    def switched_off(self) -> list[int]:
        return sorted(k for k, v in self.z_a.items() if v == 0)

    @property
    def generators_off(self) -> list[int]:
        return sorted(k for k, v in self.z_g.items() if v == 0)


@dataclass
class RecourseResult:
    value: float
    status: Status
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    ramp_cost: float = 0.0
    shed_cost: float = 0.0
    shed_p_mw: float = 0.0
    shed_q_mvar: float = 0.0


@dataclass
class DeterministicSolution:
    decision: FirstStageDecision
    objective: float
    first_stage_cost: float
    recourse: RecourseResult
    status: Status
    gap: float
    wall_time: float
    bound: float = math.nan


@dataclass
class DroSolution:
    decision: FirstStageDecision
    objective: float
    lb_trace: list[float]
    ub_trace: list[float]
    scenarios: list[tuple[float, float]]
    worst_omega: tuple[float, float] | None
    per_scenario: dict[tuple[float, float], RecourseResult]
    status: str
    iterations: int
    first_stage_cost: float
    gap: float
    wall_time: float
    trace: list[dict] = field(default_factory=list)

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(trace: Sequence[dict]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["iter", "LB", "UB", "omega_e", "omega_n", "wall_ms"])
    for row in trace:
        om = row.get("omega") or (math.nan, math.nan)
        wr.writerow([row["iter"], repr(float(row["lb"])), repr(float(row["ub"])), repr(float(om[0])),
                     repr(float(om[1])),
                     f"{row['wall_ms']:.1f}"])
    return buf.getvalue()


# ------------------------------------------------------------------ helpers


def _decision_from_y(model: StandardFormModel, y: np.ndarray, lam=(0.0, 0.0), eta=0.0) -> FirstStageDecision:
    case = model.case
    zg = {g.id: int(round(y[model.y_index(f"z_g[{g.id}]")])) for g in case.generators}
    za = {br.id: int(round(y[model.y_index(f"z_a[{br.id}]")])) for br in case.branches}
    rho = {g.id: float(y[model.y_index(f"rho[{g.id}]")]) * case.base_mva for g in case.generators}
    return FirstStageDecision(zg, za, rho, (float(lam[0]), float(lam[1])), float(eta), np.asarray(y, float))


def _clean_y(model: StandardFormModel, y: np.ndarray) -> np.ndarray:
    y = np.array(y, dtype=float)
    bins = model.y_binary
    y[bins] = np.round(y[bins])
    return y


def fixed_bounds(model: StandardFormModel, mode: CaseMode,
                 reference: FirstStageDecision | None = None) -> tuple[np.ndarray, np.ndarray]:
    """First-stage bounds implementing the variable fixing of a case mode."""
    lb, ub = model.y_lb.copy(), model.y_ub.copy()
    if mode == CaseMode.C3:
        for name in model.y_names:
            if name.startswith(("z_g[", "z_a[")):
                k = model.y_index(name)
                lb[k] = ub[k] = 1.0
    elif mode == CaseMode.C2:
        if reference is None or reference.y is None:
            raise ValueError("mode c2 needs the first-stage decision of a c0 solve")
        for name in model.y_names:
            if name.startswith(("z_g[", "z_a[", "rho[")):
                k = model.y_index(name)
                lb[k] = ub[k] = reference.y[k]
    return lb, ub


def _breakdown(model: StandardFormModel, x: np.ndarray) -> tuple[float, float, float, float]:
    ramp = shed = shed_p = shed_q = 0.0
    base = model.case.base_mva
    for k, var in enumerate(model.x_vars):
        if var.name.startswith(("dp[", "dp_sq[")):
            ramp += model.c[k] * x[k]
        elif var.name.startswith(("lp_", "lq_")):
            shed += model.c[k] * x[k]
            if var.name.startswith("lp_plus"):
                shed_p += x[k] * base
            elif var.name.startswith("lq_plus"):
                shed_q += x[k] * base
    return ramp, shed, shed_p, shed_q


# ------------------------------------------------------------ single solves


def recourse_value(model: StandardFormModel, y, omega: Sequence[float]) -> RecourseResult:
    """Second-stage value ``H(y, omega)``; ``+inf`` when the LP is infeasible."""
    y = y.y if isinstance(y, FirstStageDecision) else np.asarray(y, dtype=float)
    res = solve_lp_with_duals(model.recourse_ir(y, omega))
    if res.status == Status.INFEASIBLE:
        return RecourseResult(math.inf, res.status)
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"recourse LP failed: {res.status.value} ({res.message})")
    ramp, shed, sp_, sq_ = _breakdown(model, res.x)
    return RecourseResult(res.objective, res.status, res.x, res.duals, ramp, shed, sp_, sq_)


def solve_deterministic(model: StandardFormModel, omega: Sequence[float], y_lb=None, y_ub=None,
                        time_limit: float | None = None) -> DeterministicSolution:
    """Single-scenario MILP ``min a.y + c.x`` at a fixed field."""
    t0 = time.perf_counter()
    ir = model.deterministic_ir(tuple(omega), y_lb, y_ub)
    res = solve_milp(ir, time_limit=time_limit)
    if not res.has_solution:
        raise SolverFailure(f"deterministic model returned {res.status.value}: {res.message}")
    y = _clean_y(model, res.x[:model.ny])
    x = res.x[model.ny:]
    ramp, shed, sp_, sq_ = _breakdown(model, x)
    first = float(model.a @ y)
    rec = RecourseResult(float(model.c @ x), Status.OPTIMAL, x, None, ramp, shed, sp_, sq_)
    bound = res.objective if res.status == Status.OPTIMAL else res.bound
    return DeterministicSolution(_decision_from_y(model, y), res.objective, first, rec, res.status,
                                 res.gap, time.perf_counter() - t0, bound)


# ---------------------------------------------------------------- subproblem


def _vertex_list(K) -> list[tuple[float, float]]:
    if isinstance(K, SupportPolytope):
        return list(K.vertices)
    return [tuple(map(float, w)) for w in K]


def subproblem_enumerate(model: StandardFormModel, y, lam: Sequence[float], K,
                         jobs: int = 1) -> tuple[tuple[float, float], float, list[RecourseResult]]:
    """Worst vertex for ``H(y, w) - lam.w`` by one recourse LP per vertex.

    Ties go to the lowest vertex index.
    """
    verts = _vertex_list(K)
    if not verts:
        raise ValueError("empty vertex list")
    y = y.y if isinstance(y, FirstStageDecision) else np.asarray(y, dtype=float)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda w: recourse_value(model, y, w), verts))
    else:
        results = [recourse_value(model, y, w) for w in verts]
    scores = [r.value - (lam[0] * w[0] + lam[1] * w[1]) for r, w in zip(results, verts)]
    best = 0
    for k in range(1, len(scores)):
        if scores[k] > scores[best]:
            best = k
    return verts[best], scores[best], results


@dataclass
class DualMipResult:
    omega: tuple[float, float]
    value: float
    bound_binding: bool
    beta: np.ndarray
    status: Status


def _dual_rows(model: StandardFormModel, y: np.ndarray):
    """Rows of the recourse LP written as ``R x (>= | =) r`` with free ``x``."""
    nx = model.nx
    lb, ub = model.x_lb, model.x_ub
    fin_lb = np.flatnonzero(np.isfinite(lb))
    fin_ub = np.flatnonzero(np.isfinite(ub))
    B = sp.vstack([
        sp.csr_matrix((np.ones(len(fin_lb)), (np.arange(len(fin_lb)), fin_lb)), shape=(len(fin_lb), nx)),
        sp.csr_matrix((-np.ones(len(fin_ub)), (np.arange(len(fin_ub)), fin_ub)), shape=(len(fin_ub), nx)),
    ]).tocsr()
    rb = np.concatenate([lb[fin_lb], -ub[fin_ub]])
    r_e = model.h - model.G @ y
    return B, rb, r_e


def _dual_mip_exact(model, y, lam, verts, dual_bound, jobs):
    """Dual MIP answer with the box widened while it binds, else enumeration."""
    bound = float(dual_bound)
    for _ in range(DUAL_BOUND_RETRIES):
        out = subproblem_dual_mip(model, y, lam, verts, dual_bound=bound)
        if not out.bound_binding:
            return out.omega, out.value
        bound *= 100.0
    log.warning("dual box still binding at %.3g; enumerating vertices", bound / 100.0)
    omega, q, _ = subproblem_enumerate(model, y, lam, verts, jobs=jobs)
    return omega, q


def subproblem_dual_mip(model: StandardFormModel, y, lam: Sequence[float], K,
                        dual_bound: float = DEFAULT_DUAL_BOUND, force_vertex: int | None = None,
                        time_limit: float | None = None) -> DualMipResult:
    """Worst vertex through the dual of the recourse LP with vertex binaries.

    The products of vertex binaries and coupling-row duals are linearized
    with McCormick envelopes on the box ``[-dual_bound, dual_bound]``.
    ``bound_binding`` reports whether any coupling dual reached the box.  When
    it is false the value is exact for the returned vertex; other vertices are
    scored under the box and may be underestimated.
    """
    verts = _vertex_list(K)
    nk = len(verts)
    y = y.y if isinstance(y, FirstStageDecision) else np.asarray(y, dtype=float)
    B, rb, r_e = _dual_rows(model, y)
    m2, m3, nb = model.E.shape[0], model.W.shape[0], B.shape[0]
    d = [np.asarray(model.T(w) @ y).ravel() for w in verts]
    support = np.flatnonzero(np.any(np.abs(np.vstack(d)) > 0, axis=0)) if nk else np.array([], int)
    ns = len(support)
    M = float(dual_bound)

    # variable layout: gamma_E (m2) | pi (m3) | gamma_B (nb) | beta (nk) | zeta (nk * ns)
    o_pi, o_gb, o_beta, o_zeta = m2, m2 + m3, m2 + m3 + nb, m2 + m3 + nb + nk
    nvar = o_zeta + nk * ns
    lbv = np.full(nvar, -np.inf)
    ubv = np.full(nvar, np.inf)
    ge_rows = np.array([s == GE for s in model.rec_sense])
    lbv[:m2][ge_rows] = 0.0
    lbv[o_pi + support], ubv[o_pi + support] = -M, M
    lbv[o_gb:o_beta] = 0.0
    lbv[o_beta:o_zeta], ubv[o_beta:o_zeta] = 0.0, 1.0
    lbv[o_zeta:], ubv[o_zeta:] = -M, M
    binary = np.zeros(nvar, dtype=bool)
    binary[o_beta:o_zeta] = True

    obj = np.zeros(nvar)
    obj[:m2] = r_e
    obj[o_gb:o_beta] = rb
    for k, w in enumerate(verts):
        obj[o_beta + k] = -(lam[0] * w[0] + lam[1] * w[1])
        obj[o_zeta + k * ns:o_zeta + (k + 1) * ns] = d[k][support]

    # dual feasibility: E^T gamma + W^T pi + B^T gamma_B = c
    blocks = [sp.hstack([model.E.T, model.W.T, B.T, sp.csr_matrix((model.nx, nk + nk * ns))])]
    senses = [EQ] * model.nx
    rhs = [model.c]
    # sum beta = 1
    row = np.zeros(nvar)
    row[o_beta:o_zeta] = 1.0
    blocks.append(sp.csr_matrix(row))
    senses.append(EQ)
    rhs.append(np.array([1.0]))
    if force_vertex is not None:
        row = np.zeros(nvar)
        row[o_beta + force_vertex] = 1.0
        blocks.append(sp.csr_matrix(row))
        senses.append(EQ)
        rhs.append(np.array([1.0]))
    # McCormick rows for zeta_kj = beta_k * pi_j
    ri, ci, vals, mc_rhs, mc_sense = [], [], [], [], []
    r = 0
    for k in range(nk):
        for jj, j in enumerate(support):
            zc, bc, pc = o_zeta + k * ns + jj, o_beta + k, o_pi + j
            for coefs, sense, rr in (
                ({zc: 1.0, bc: -M}, LE, 0.0),
                ({zc: 1.0, bc: M}, GE, 0.0),
                ({zc: 1.0, pc: -1.0, bc: M}, LE, M),
                ({zc: 1.0, pc: -1.0, bc: -M}, GE, -M),
            ):
                for col, v in coefs.items():
                    ri.append(r)
                    ci.append(col)
                    vals.append(v)
                mc_rhs.append(rr)
                mc_sense.append(sense)
                r += 1
    if r:
        blocks.append(sp.csr_matrix((vals, (ri, ci)), shape=(r, nvar)))
        senses += mc_sense
        rhs.append(np.array(mc_rhs))
    A = sp.vstack(blocks).tocsr()
    names = tuple(f"v{k}" for k in range(nvar))
    ir = ModelIR(names, lbv, ubv, binary, A, tuple(senses), np.concatenate(rhs), obj,
                 maximize=True, name="dual_subproblem")
    res = solve_milp(ir, time_limit=time_limit, mip_rel_gap=1e-9)
    if not res.has_solution:
        raise SolverFailure(f"dual subproblem returned {res.status.value}: {res.message}")
    beta = res.x[o_beta:o_zeta]
    k = int(np.argmax(beta))
    pis = res.x[o_pi:o_gb][support] if ns else np.zeros(0)
    binding = bool(ns and np.max(np.abs(pis)) >= M * (1 - 1e-6))
    return DualMipResult(verts[k], res.objective, binding, beta, res.status)


# ----------------------------------------------------------------- masters


def _master_ir(model: StandardFormModel, scenarios: Sequence[tuple[float, float]], mu: Sequence[float],
               y_lb: np.ndarray, y_ub: np.ndarray) -> ModelIR:
    """Master over ``(y, lam_e, lam_n, eta, x^1..x^L)``."""
    ny, nx, L = model.ny, model.nx, len(scenarios)
    m1, m2, m3 = model.A.shape[0], model.E.shape[0], model.W.shape[0]
    nvar = ny + 3 + L * nx
    blocks, senses, rhs = [], [], []
    blocks.append(sp.hstack([model.A, sp.csr_matrix((m1, nvar - ny))]))
    senses += [GE] * m1
    rhs.append(model.b)
    for l, w in enumerate(scenarios):
        left = sp.csr_matrix((m2, 3 + l * nx))
        right = sp.csr_matrix((m2, (L - l - 1) * nx))
        blocks.append(sp.hstack([model.G, left, model.E, right]))
        senses += list(model.rec_sense)
        rhs.append(model.h)
        left = sp.csr_matrix((m3, 3 + l * nx))
        right = sp.csr_matrix((m3, (L - l - 1) * nx))
        blocks.append(sp.hstack([-model.T(w), left, model.W, right]))
        senses += [EQ] * m3
        rhs.append(np.zeros(m3))
        # eta + lam.w - c.x^l >= 0
        row = np.zeros(nvar)
        row[ny], row[ny + 1], row[ny + 2] = w[0], w[1], 1.0
        row[ny + 3 + l * nx: ny + 3 + (l + 1) * nx] = -model.c
        blocks.append(sp.csr_matrix(row))
        senses.append(GE)
        rhs.append(np.zeros(1))
    A = sp.vstack(blocks).tocsr()
    A.eliminate_zeros()
    if A.nnz > MAX_MODEL_NONZEROS:
        raise ModelTooLarge(f"master has {A.nnz} nonzeros ({L} scenario copies of {nx} variables); "
                            f"limit is {MAX_MODEL_NONZEROS}")
    lb = np.concatenate([y_lb, [-np.inf, -np.inf, -np.inf], np.tile(model.x_lb, L)])
    ub = np.concatenate([y_ub, [np.inf, np.inf, np.inf], np.tile(model.x_ub, L)])
    binary = np.concatenate([model.y_binary, np.zeros(3 + L * nx, dtype=bool)])
    obj = np.concatenate([model.a, [mu[0], mu[1], 1.0], np.zeros(L * nx)])
    names = tuple(model.y_names + ["lam_e", "lam_n", "eta"]
                  + [f"{n}@{l}" for l in range(L) for n in model.x_names])
    return ModelIR(names, lb, ub, binary, A, tuple(senses), np.concatenate(rhs), obj, name="master")


def _check_mean(mu, verts):
    if not mean_in_hull(mu, np.array(verts)):
        raise MasterUnboundedError(
            f"mean {tuple(mu)} is outside the convex hull of the scenario vertices, so the master "
            "problem is unbounded; check mean_in_hull(mu, K) before solving")


def _solve_master(model, scenarios, mu, y_lb, y_ub, time_limit):
    res = solve_milp(_master_ir(model, scenarios, mu, y_lb, y_ub), time_limit=time_limit)
    if res.status == Status.UNBOUNDED:
        raise MasterUnboundedError("master problem is unbounded; the mean must lie in the hull of the "
                                   "scenario set (see mean_in_hull)")
    if not res.has_solution:
        raise SolverFailure(f"master returned {res.status.value}: {res.message}")
    return res


def full_enumeration(model: StandardFormModel, K, mu: Sequence[float], y_lb=None, y_ub=None,
                     time_limit: float | None = None) -> DroSolution:
    """Monolithic model with one recourse copy per vertex."""
    t0 = time.perf_counter()
    verts = _vertex_list(K)
    _check_mean(mu, verts)
    y_lb = model.y_lb if y_lb is None else y_lb
    y_ub = model.y_ub if y_ub is None else y_ub
    res = _solve_master(model, verts, mu, y_lb, y_ub, time_limit)
    y = _clean_y(model, res.x[:model.ny])
    lam = res.x[model.ny:model.ny + 2]
    eta = res.x[model.ny + 2]
    dec = _decision_from_y(model, y, lam, eta)
    first = float(model.a @ y)
    status = "optimal" if res.status == Status.OPTIMAL else "time_limit"
    return DroSolution(dec, res.objective, [res.objective], [res.objective], verts, None, {}, status, 1,
                       first, res.gap if res.status != Status.OPTIMAL else 0.0, time.perf_counter() - t0,
                       [{"iter": 1, "lb": res.objective, "ub": res.objective, "omega": None,
                         "wall_ms": 1000 * (time.perf_counter() - t0)}])


def ccg_solve(model: StandardFormModel, K, mu: Sequence[float], eps: float = DEFAULT_EPS,
              y_lb=None, y_ub=None, method: str = "enumerate", max_iter: int | None = None,
              time_limit: float | None = None, jobs: int = 1, dual_bound: float = DEFAULT_DUAL_BOUND,
              callback: Callable[[dict], None] | None = None) -> DroSolution:
    """Column-and-constraint generation.

    The scenario set starts from a smallest group of vertices whose hull
    contains ``mu`` (the master is unbounded otherwise).  Each iteration
    solves the master for a lower bound, finds the worst vertex for the
    master's ``(y, lam)``, forms ``UB = F - eta + Q`` from the master incumbent
    value ``F`` (equal to LB when the master is solved to optimality) and
    adds the vertex.
    Stops when ``|UB - LB| <= eps * max(|LB|, 1)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    t0 = time.perf_counter()
    verts = _vertex_list(K)
    _check_mean(mu, verts)
    y_lb = model.y_lb if y_lb is None else np.asarray(y_lb, float)
    y_ub = model.y_ub if y_ub is None else np.asarray(y_ub, float)
    cap = max_iter if max_iter is not None else len(verts) + 5
    scenarios = [verts[k] for k in hull_support(mu, np.array(verts))]
    lbs, ubs, trace = [], [], []
    status = "optimal"
    best_ub = math.inf
    last = None
    for it in range(1, cap + 1):
        remaining = None if time_limit is None else max(1.0, time_limit - (time.perf_counter() - t0))
        res = _solve_master(model, scenarios, mu, y_lb, y_ub, remaining)
        lb = res.objective if res.status == Status.OPTIMAL else res.bound
        y = _clean_y(model, res.x[:model.ny])
        lam = res.x[model.ny:model.ny + 2]
        eta = float(res.x[model.ny + 2])
        if method == "enumerate":
            omega, q, _ = subproblem_enumerate(model, y, lam, verts, jobs=jobs)
        elif method == "dual_mip":
            omega, q = _dual_mip_exact(model, y, lam, verts, dual_bound, jobs)
        else:
            raise ValueError(f"unknown subproblem method {method!r}")
        incumbent = res.objective
        if method == "dual_mip" and abs(incumbent - eta + q - lb) <= eps * max(abs(lb), 1.0):
            # the box can misrank vertices other than the returned one
            omega_chk, q_chk, _ = subproblem_enumerate(model, y, lam, verts, jobs=jobs)
            if q_chk > q:
                omega, q = omega_chk, q_chk
        ub = incumbent - eta + q
        best_ub = min(best_ub, ub)
        lbs.append(lb)
        ubs.append(ub)
        row = {"iter": it, "lb": lb, "ub": ub, "omega": omega, "wall_ms": 1000 * (time.perf_counter() - t0)}
        trace.append(row)
        if callback:
            callback(row)
        last = (y, lam, eta, omega)
        if res.status != Status.OPTIMAL or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            status = "time_limit"
            break
        if abs(ub - lb) <= eps * max(abs(lb), 1.0):
            break
        if omega in scenarios:
            status = "stalled"
            break
        scenarios.append(omega)
    else:
        raise IterationLimitError(f"no convergence within {cap} iterations", trace)

    y, lam, eta, omega = last
    dec = _decision_from_y(model, y, lam, eta)
    per = {w: recourse_value(model, y, w) for w in dict.fromkeys(scenarios + [omega])}
    gap = abs(ubs[-1] - lbs[-1]) / max(abs(lbs[-1]), 1.0)
    return DroSolution(dec, lbs[-1], lbs, ubs, scenarios, omega, per, status, len(lbs),
                       float(model.a @ y), gap, time.perf_counter() - t0, trace)


# ----------------------------------------------------------------- case runs


@dataclass
class CaseReport:
    mode: str
    level: str
    band: str
    ramp_pct: float
    delta_deg: float | None
    objective: float
    first_stage_cost: float
    worst_omega: tuple[float, float]
    switched_off: list[int]
    generators_off: list[int]
    shed_cost: float
    shed_pct: float
    status: str
    gap: float
    iterations: int
    wall_time: float
    trace: list[dict] = field(default_factory=list)
    decision: FirstStageDecision | None = field(default=None, repr=False)
    bound: float = math.nan
    upper: float = math.nan


def run_case(case, mode: CaseMode | str, level: str, band: str = "55-60", ramp_frac: float = 0.1,
             delta_deg: float = 2.0, cfg: RelaxConfig | None = None, eps: float = DEFAULT_EPS,
             time_limit: float | None = None, reference: FirstStageDecision | None = None,
             method: str = "enumerate", jobs: int = 1, model: StandardFormModel | None = None,
             enumerate_all: bool = False) -> CaseReport:
    """Run one cell of the case-study matrix.

    ``reference`` supplies the C0 decision for mode C2; when absent a C0
    solve at the same settings runs first.  ``enumerate_all`` solves the
    monolithic all-vertex model instead of CCG.
    """
    mode = CaseMode(mode)
    spec = gmd_params(level, band)
    model = model or build_standard_form(case, cfg, ramp_frac=ramp_frac, nu_max=spec.nu_max)
    t0 = time.perf_counter()
    if mode == CaseMode.C0:
        sol = solve_deterministic(model, spec.mu, time_limit=time_limit)
        total = sol.objective
        return CaseReport(mode.value, spec.storm_level.value, spec.mlat_band, 100 * ramp_frac, None, total,
                          sol.first_stage_cost, spec.mu, sol.decision.switched_off, sol.decision.generators_off,
                          sol.recourse.shed_cost, _pct(sol.recourse.shed_cost, total),
                          "optimal" if sol.status == Status.OPTIMAL else "time_limit", sol.gap, 1,
                          time.perf_counter() - t0, [], sol.decision, sol.bound, total)
    if mode == CaseMode.C2 and reference is None:
        reference = solve_deterministic(model, spec.mu, time_limit=time_limit).decision
    y_lb, y_ub = fixed_bounds(model, mode, reference)
    K = support_vertices(spec.nu_max, delta_deg)
    if enumerate_all:
        sol = full_enumeration(model, K, spec.mu, y_lb, y_ub, time_limit=time_limit)
        _, _, results = subproblem_enumerate(model, sol.decision.y, sol.decision.lam, K, jobs=jobs)
        scores = [r.value - float(np.dot(sol.decision.lam, w)) for r, w in zip(results, K.vertices)]
        k = int(np.argmax(scores))
        sol.worst_omega = K.vertices[k]
        sol.per_scenario = {K.vertices[k]: results[k]}
    else:
        sol = ccg_solve(model, K, spec.mu, eps, y_lb, y_ub, method=method, time_limit=time_limit, jobs=jobs)
    worst = sol.per_scenario[sol.worst_omega]
    return CaseReport(mode.value, spec.storm_level.value, spec.mlat_band, 100 * ramp_frac, delta_deg,
                      sol.objective, sol.first_stage_cost, sol.worst_omega, sol.decision.switched_off,
                      sol.decision.generators_off, worst.shed_cost, _pct(worst.shed_cost, sol.objective),
                      sol.status, sol.gap, sol.iterations, time.perf_counter() - t0, sol.trace, sol.decision,
                      sol.lb_trace[-1], min(sol.ub_trace))


def _pct(part: float, total: float) -> float:
    return 100.0 * part / total if total else 0.0
