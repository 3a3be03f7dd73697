"""Mixed-integer linear relaxation of the two-stage switching model.

Cuts are produced symbolically (dicts of variable name -> coefficient) by the
small generator functions below, then assembled into a
:class:`StandardFormModel`::

    first stage   A y >= b
    recourse      G y + E x (>= or =) h
    coupling      T(omega) y = W x,   T(omega) = omega_E * T1 + omega_N * T2

with ``y = (z_g, z_a, rho, rho_sq)`` and the recourse vector ``x`` holding
dispatch, AC flow, lifted voltage products, DC circuit quantities, ramp
excess and load slacks.  Power quantities are per unit on the case MVA base.
DC voltages are carried in kilovolts and DC currents in kiloamps, which keeps
the DC rows within a few orders of magnitude of the AC rows; multiply by
:data:`DC_UNIT` to get volts and amps.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from dataclasses import fields as dataclass_fields
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import gic as gicmod
from .netmodel import DcEdgeKind, PowerCase
from .solverapi import EQ, GE, LE, ModelIR

DC_UNIT = 1000.0  # volts per model voltage unit, amps per model current unit

Expr = Mapping[str, float]


@dataclass(frozen=True)
class LinPointSet:
    lower: float
    upper: float
    points: tuple[float, ...]

    def __iter__(self):
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)


def lin_points(lb: float, ub: float, n: int) -> LinPointSet:
    """``n`` equally spaced points on ``[lb, ub]`` including both ends."""
    if not lb < ub:
        raise ValueError(f"lower bound {lb} must be below upper bound {ub}")
    if n < 2:
        raise ValueError("at least two points are required")
    pts = np.linspace(lb, ub, n)
    pts[0], pts[-1] = lb, ub
    return LinPointSet(float(lb), float(ub), tuple(float(p) for p in pts))


@dataclass(frozen=True)
class Cut:
    coefs: dict[str, float]
    sense: str
    rhs: float
    tag: str

    def activity(self, values: Mapping[str, float]) -> float:
        return sum(c * values[k] for k, c in self.coefs.items())

    def violation(self, values: Mapping[str, float]) -> float:
        act = self.activity(values)
        if self.sense == GE:
            return max(0.0, self.rhs - act)
        if self.sense == LE:
            return max(0.0, act - self.rhs)
        return abs(act - self.rhs)


def _expr(e: str | Expr) -> dict[str, float]:
    return {e: 1.0} if isinstance(e, str) else dict(e)


def _combine(*terms: tuple[float, str | Expr]) -> dict[str, float]:
    out: dict[str, float] = {}
    for scale, e in terms:
        for k, v in _expr(e).items():
            out[k] = out.get(k, 0.0) + scale * v
    return {k: v for k, v in out.items() if v != 0.0}


# ------------------------------------------------------------ cut generators


def perspective_oa(rho: str, rho_sq: str, z: str, points: Iterable[float],
                   tag: str = "perspective_cut") -> list[Cut]:
    """Tangent cuts ``rho_sq >= 2 l rho - z l^2`` of the on/off quadratic."""
    return [Cut(_combine((1.0, rho_sq), (-2.0 * l, rho), (l * l, z)), GE, 0.0, tag) for l in points]


def mccormick(x: str | Expr, x_bounds: tuple[float, float], y: str | Expr,
              y_bounds: tuple[float, float], w: str, tag: str = "mccormick") -> list[Cut]:
    """The four McCormick inequalities for ``w = x * y`` on a box."""
    (xl, xu), (yl, yu) = x_bounds, y_bounds
    if not all(math.isfinite(b) for b in (xl, xu, yl, yu)):
        raise ValueError("McCormick envelopes need finite bounds on both factors")
    return [
        # w >= xl*y + x*yl - xl*yl
        Cut(_combine((1.0, w), (-xl, y), (-yl, x)), GE, -xl * yl, tag),
        # w >= xu*y + x*yu - xu*yu
        Cut(_combine((1.0, w), (-xu, y), (-yu, x)), GE, -xu * yu, tag),
        # w <= xu*y + x*yl - xu*yl
        Cut(_combine((1.0, w), (-xu, y), (-yl, x)), LE, -xu * yl, tag),
        # w <= xl*y + x*yu - xl*yu
        Cut(_combine((1.0, w), (-xl, y), (-yu, x)), LE, -xl * yu, tag),
    ]


def voltage_square_relax(v: str, w: str, v_min: float, v_max: float,
                         points: Iterable[float]) -> list[Cut]:
    """Secant upper cut and tangent lower cuts for ``w = v^2``."""
    cuts = [Cut({w: 1.0, v: -(v_max + v_min)}, LE, -v_max * v_min, "voltage_square_secant")]
    cuts += [Cut({w: 1.0, v: -2.0 * l}, GE, -l * l, "voltage_square_oa") for l in points]
    return cuts


def trig_product_relax(z: str, wc: str, ws: str, wz_from: str, wz_to: str,
                       v_min: tuple[float, float], v_max: tuple[float, float],
                       theta_max_deg: float, n_points: int) -> list[Cut]:
    """Cuts on ``(wc, ws) = v_i v_j (cos, sin)(theta_i - theta_j)`` for a switchable branch.

    Rotated-cone cuts are taken at points on the cone surface
    ``lc^2 + ls^2 = lf * lt``: ``lc`` and ``ls`` run over grids on the
    ``wc``/``ws`` boxes and ``lf`` over the from-end squared-voltage box,
    with ``lt`` solved from the surface equation.  Only surface points give
    valid supporting planes, and then the right-hand side vanishes.
    """
    th = math.radians(theta_max_deg)
    vmax2 = v_max[0] * v_max[1]
    vmin2 = v_min[0] * v_min[1]
    wc_lo, wc_hi = vmin2 * math.cos(th), vmax2
    ws_hi = vmax2 * math.sin(th)
    cuts = [
        Cut({wc: 1.0, z: -wc_lo}, GE, 0.0, "trig_bounds"),
        Cut({wc: 1.0, z: -wc_hi}, LE, 0.0, "trig_bounds"),
        Cut({ws: 1.0, z: ws_hi}, GE, 0.0, "trig_bounds"),
        Cut({ws: 1.0, z: -ws_hi}, LE, 0.0, "trig_bounds"),
        Cut({ws: 1.0, wc: -math.tan(th)}, LE, 0.0, "angle_limit"),
        Cut({ws: 1.0, wc: math.tan(th)}, GE, 0.0, "angle_limit"),
    ]
    lc_set = lin_points(wc_lo, wc_hi, n_points)
    ls_set = lin_points(-ws_hi, ws_hi, n_points)
    lf_set = lin_points(v_min[0] ** 2, v_max[0] ** 2, n_points)
    for lc in lc_set:
        for ls in ls_set:
            if lc == 0.0 and ls == 0.0:
                continue
            for lf in lf_set:
                lt = (lc * lc + ls * ls) / lf
                cuts.append(Cut(_combine((2.0 * lc, wc), (2.0 * ls, ws), (-lt, wz_from), (-lf, wz_to)),
                                LE, 0.0, "rotated_soc_oa"))
    return cuts


def thermal_oa(p: str, q: str, z: str, s_max: float, n_points: int) -> list[Cut]:
    """Tangent cuts of ``p^2 + q^2 <= z s^2`` over a grid on ``[-s, s]^2``.

    Rows are divided by ``max(1, s)`` so their coefficients stay of order ``s``.
    """
    grid = lin_points(-s_max, s_max, n_points)
    k = 1.0 / max(1.0, s_max)
    cuts = []
    for lp in grid:
        for lq in grid:
            cuts.append(Cut(_combine((2.0 * lp * k, p), (2.0 * lq * k, q),
                                     (-(s_max ** 2 + lp * lp + lq * lq) * k, z)), LE, 0.0, "thermal_oa"))
    return cuts


def effective_gic_relax(ieff: str, winding_terms: Expr, cap: float) -> list[Cut]:
    """``ieff >= |sum theta I|`` via two inequalities, plus the cap."""
    return [
        Cut(_combine((1.0, ieff), (-1.0, winding_terms)), GE, 0.0, "effective_gic_abs"),
        Cut(_combine((1.0, ieff), (1.0, winding_terms)), GE, 0.0, "effective_gic_abs"),
        Cut({ieff: 1.0}, LE, cap, "effective_gic_cap"),
    ]


# ---------------------------------------------------------------- the model


@dataclass(frozen=True)
class RelaxConfig:
    n_points_quadratic: int = 8
    n_points_rsoc: int = 3
    n_points_thermal: int = 8
    feasibility_tol: float = 1e-8
    # Ramp-cost tangents are placed on [0, ramp_grid_frac * gp_max] whatever
    # the ramp limit, so that the relaxation only grows with the limit.
    ramp_grid_frac: float = 0.2
    # Order the switching variables of identical parallel branches; any
    # solution maps to an ordered one by swapping twins, so no optimum is lost.
    symmetry_breaking: bool = True

    def __post_init__(self):
        if min(self.n_points_quadratic, self.n_points_rsoc, self.n_points_thermal) < 2:
            raise ValueError("all point counts must be at least 2")
        if not 0 < self.ramp_grid_frac <= 1:
            raise ValueError("ramp_grid_frac must lie in (0, 1]")


@dataclass(frozen=True)
class VarInfo:
    name: str
    symbol: str
    lb: float
    ub: float
    binary: bool = False
    unit: str = ""


@dataclass(frozen=True)
class RowInfo:
    block: str  # "first", "recourse" or "coupling"
    index: int
    tag: str
    name: str


@dataclass
class StandardFormModel:
    y_vars: list[VarInfo]
    a: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    x_vars: list[VarInfo]
    c: np.ndarray
    G: sp.csr_matrix
    E: sp.csr_matrix
    h: np.ndarray
    rec_sense: tuple[str, ...]
    W: sp.csr_matrix
    T1: sp.csr_matrix
    T2: sp.csr_matrix
    rows: list[RowInfo]
    case: PowerCase
    config: RelaxConfig
    ramp_frac: float | None
    nu_bound: float
    cuts: list[tuple[str, Cut]] = field(default_factory=list, repr=False)

    # ---- dimensions and lookups
    @property
    def ny(self) -> int:
        return len(self.y_vars)

    @property
    def nx(self) -> int:
        return len(self.x_vars)

    @property
    def y_names(self) -> list[str]:
        return [v.name for v in self.y_vars]

    @property
    def x_names(self) -> list[str]:
        return [v.name for v in self.x_vars]

    @property
    def y_lb(self) -> np.ndarray:
        return np.array([v.lb for v in self.y_vars])

    @property
    def y_ub(self) -> np.ndarray:
        return np.array([v.ub for v in self.y_vars])

    @property
    def y_binary(self) -> np.ndarray:
        return np.array([v.binary for v in self.y_vars])

    @property
    def x_lb(self) -> np.ndarray:
        return np.array([v.lb for v in self.x_vars])

    @property
    def x_ub(self) -> np.ndarray:
        return np.array([v.ub for v in self.x_vars])

    def y_index(self, name: str) -> int:
        return self._yidx[name]

    def x_index(self, name: str) -> int:
        return self._xidx[name]

    def __post_init__(self):
        self._yidx = {v.name: k for k, v in enumerate(self.y_vars)}
        self._xidx = {v.name: k for k, v in enumerate(self.x_vars)}
        m1, m2, m3 = self.A.shape[0], self.G.shape[0], self.W.shape[0]
        checks = [
            (self.A.shape, (m1, self.ny), "A"), (self.G.shape, (m2, self.ny), "G"),
            (self.E.shape, (m2, self.nx), "E"), (self.W.shape, (m3, self.nx), "W"),
            (self.T1.shape, (m3, self.ny), "T1"), (self.T2.shape, (m3, self.ny), "T2"),
        ]
        for got, want, label in checks:
            if got != want:
                raise RuntimeError(f"matrix {label} has shape {got}, expected {want}")
        if len(self.b) != m1 or len(self.h) != m2 or len(self.rec_sense) != m2:
            raise RuntimeError("right-hand side lengths disagree with the row blocks")
        if len(self.a) != self.ny or len(self.c) != self.nx:
            raise RuntimeError("cost vector lengths disagree with the variable blocks")

    def T(self, omega: Sequence[float]) -> sp.csr_matrix:
        t = (omega[0] * self.T1 + omega[1] * self.T2).tocsr()
        t.eliminate_zeros()
        return t

    # ---- model assembly helpers used by the solvers
    def recourse_ir(self, y: np.ndarray, omega: Sequence[float], name: str = "recourse") -> ModelIR:
        """LP ``min c.x`` for a fixed first stage and field."""
        y = np.asarray(y, dtype=float)
        A = sp.vstack([self.E, self.W]).tocsr()
        rhs = np.concatenate([self.h - self.G @ y, self.T(omega) @ y])
        sense = self.rec_sense + (EQ,) * self.W.shape[0]
        tags = tuple(r.tag for r in self.rows if r.block != "first")
        return ModelIR(tuple(self.x_names), self.x_lb, self.x_ub, np.zeros(self.nx, dtype=bool),
                       A, sense, rhs, self.c.copy(), row_tags=tags, name=name)

    def deterministic_ir(self, omega: Sequence[float], y_lb=None, y_ub=None) -> ModelIR:
        """Monolithic MILP ``min a.y + c.x`` at a fixed field."""
        Ty = self.T(omega)
        zero_first = sp.csr_matrix((self.A.shape[0], self.nx))
        A = sp.vstack([
            sp.hstack([self.A, zero_first]),
            sp.hstack([self.G, self.E]),
            sp.hstack([-Ty, self.W]),
        ]).tocsr()
        A.eliminate_zeros()
        rhs = np.concatenate([self.b, self.h, np.zeros(self.W.shape[0])])
        sense = (GE,) * self.A.shape[0] + self.rec_sense + (EQ,) * self.W.shape[0]
        lb = np.concatenate([self.y_lb if y_lb is None else y_lb, self.x_lb])
        ub = np.concatenate([self.y_ub if y_ub is None else y_ub, self.x_ub])
        binary = np.concatenate([self.y_binary, np.zeros(self.nx, dtype=bool)])
        names = tuple(self.y_names + self.x_names)
        return ModelIR(names, lb, ub, binary, A, sense, rhs, np.concatenate([self.a, self.c]),
                       row_tags=tuple(r.tag for r in self.rows), name="deterministic")

    def first_stage_ir(self) -> ModelIR:
        return ModelIR(tuple(self.y_names), self.y_lb, self.y_ub, self.y_binary, self.A,
                       (GE,) * self.A.shape[0], self.b, self.a.copy(),
                       row_tags=tuple(r.tag for r in self.rows if r.block == "first"),
                       name="first_stage")

    def registry_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["row_id", "block", "tag", "name", "variables"])
        for k, (row, (_, cut)) in enumerate(zip(self.rows, self.cuts)):
            wr.writerow([k, row.block, row.tag, row.name, " ".join(sorted(cut.coefs))])
        return buf.getvalue()

    def variable_symbols(self) -> dict[str, str]:
        return {v.name: v.symbol for v in self.y_vars + self.x_vars}

    def check_point(self, values: Mapping[str, float], omega: Sequence[float]) -> list[tuple[str, float]]:
        """Violations of every emitted row at a named point (empty when feasible)."""
        out = []
        tol = self.config.feasibility_tol
        for name, cut in self.cuts:
            if cut.tag == "dc_ohm_switched":
                coefs = dict(cut.coefs)
                t = self._ohm_source[name]
                zname, scale_e, scale_n = t
                coefs[zname] = coefs.get(zname, 0.0) - (scale_e * omega[0] + scale_n * omega[1])
                viol = abs(sum(c * values[k] for k, c in coefs.items()))
            else:
                viol = cut.violation(values)
            if viol > tol * max(1.0, abs(cut.rhs)):
                out.append((name, viol))
        for v in self.y_vars + self.x_vars:
            val = values[v.name]
            if val < v.lb - tol or val > v.ub + tol:
                out.append((f"bound:{v.name}", val))
        return out


class _Assembler:
    def __init__(self):
        self.y: list[VarInfo] = []
        self.x: list[VarInfo] = []
        self.a: dict[str, float] = {}
        self.c: dict[str, float] = {}
        self.cuts: list[tuple[str, str, Cut]] = []  # (block, name, cut)
        self.coupling: list[tuple[str, Cut, dict[str, float], dict[str, float]]] = []
        self.blocks: dict[str, str] = {}

    def add_y(self, name, symbol, lb, ub, binary=False, cost=0.0, unit=""):
        self.y.append(VarInfo(name, symbol, lb, ub, binary, unit))
        self.blocks[name] = "y"
        if cost:
            self.a[name] = cost

    def add_x(self, name, symbol, lb=-math.inf, ub=math.inf, cost=0.0, unit=""):
        self.x.append(VarInfo(name, symbol, lb, ub, unit=unit))
        self.blocks[name] = "x"
        if cost:
            self.c[name] = self.c.get(name, 0.0) + cost

    def add(self, cuts: Cut | Iterable[Cut], name: str):
        if isinstance(cuts, Cut):
            cuts = [cuts]
        for k, cut in enumerate(cuts):
            for var in cut.coefs:
                if var not in self.blocks:
                    raise RuntimeError(f"row {name} references undeclared variable {var}")
            block = "first" if all(self.blocks[v] == "y" for v in cut.coefs) else "recourse"
            self.cuts.append((block, f"{name}#{k}" if k else name, cut))

    def add_coupling(self, name: str, w_cut: Cut, t1: dict[str, float], t2: dict[str, float]):
        self.coupling.append((name, w_cut, t1, t2))


def _sparse(rows: list[dict[str, float]], index: dict[str, int], ncol: int) -> sp.csr_matrix:
    data, ri, ci = [], [], []
    for r, coefs in enumerate(rows):
        for k, v in coefs.items():
            data.append(v)
            ri.append(r)
            ci.append(index[k])
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), ncol))


def parallel_twins(case: PowerCase) -> list[list[int]]:
    """Groups (two or more) of branch ids that are interchangeable copies.

    Twins share terminals, orientation and every electrical attribute, so
    they also map to identical DC edges between the same nodes.
    """
    groups: dict[tuple, list[int]] = {}
    for br in case.branches:
        key = tuple(getattr(br, f.name) for f in dataclass_fields(br) if f.name not in ("id", "name"))
        groups.setdefault(key, []).append(br.id)
    return [ids for ids in groups.values() if len(ids) > 1]


def build_standard_form(case: PowerCase, cfg: RelaxConfig | None = None,
                        ramp_frac: float | None = None, nu_max: float | None = None) -> StandardFormModel:
    """Assemble the relaxed two-stage model of ``case``.

    ``ramp_frac`` overrides every generator's ramp fraction.  ``nu_max``
    sizes the DC voltage boxes (defaults to the largest storm amplitude in
    the shipped storm table so that one model serves every storm level).
    """
    cfg = cfg or RelaxConfig()
    if nu_max is None:
        nu_max = 16.1
    base = case.base_mva
    kappa = case.kappa * base
    bmap = {b.id: b for b in case.buses}
    asm = _Assembler()

    # ---------------- first stage
    for g in case.generators:
        asm.add_y(f"z_g[{g.id}]", "z^g", 0.0, 1.0, True, g.c0)
    for br in case.branches:
        asm.add_y(f"z_a[{br.id}]", "z^a", 0.0, 1.0, True)
    for g in case.generators:
        asm.add_y(f"rho[{g.id}]", "rho", 0.0, g.gp_max / base, cost=g.c1 * base)
    for g in case.generators:
        asm.add_y(f"rho_sq[{g.id}]", "rho_check", 0.0, (g.gp_max / base) ** 2, cost=g.c2 * base * base)
    for g in case.generators:
        z, rho, rsq = f"z_g[{g.id}]", f"rho[{g.id}]", f"rho_sq[{g.id}]"
        lo, hi = g.gp_min / base, g.gp_max / base
        asm.add(Cut({rho: 1.0, z: -lo}, GE, 0.0, "setpoint_min"), f"setpoint_min[{g.id}]")
        asm.add(Cut({z: hi, rho: -1.0}, GE, 0.0, "setpoint_max"), f"setpoint_max[{g.id}]")
        pts = lin_points(lo, hi, cfg.n_points_quadratic) if hi > lo else [hi]
        asm.add(perspective_oa(rho, rsq, z, pts), f"perspective[{g.id}]")

    if cfg.symmetry_breaking:
        for group in parallel_twins(case):
            for first, second in zip(group, group[1:]):
                asm.add(Cut({f"z_a[{first}]": 1.0, f"z_a[{second}]": -1.0}, GE, 0.0, "parallel_symmetry"),
                        f"parallel_symmetry[{first},{second}]")

    # ---------------- recourse variables
    cap = case.gic_cap() / DC_UNIT
    vbound = gicmod.voltage_bound(case, nu_max) / DC_UNIT
    for g in case.generators:
        asm.add_x(f"fp[{g.id}]", "f^p", min(0.0, g.gp_min / base), max(0.0, g.gp_max / base))
        asm.add_x(f"fq[{g.id}]", "f^q", min(0.0, g.gq_min / base), max(0.0, g.gq_max / base))
    for br in case.branches:
        s = br.s_rating / base
        for end in ("ft", "tf"):
            asm.add_x(f"p_{end}[{br.id}]", "p", -s, s)
            asm.add_x(f"q_{end}[{br.id}]", "q", -s, s)
    for b in case.buses:
        asm.add_x(f"v[{b.id}]", "v", b.v_min, b.v_max)
        asm.add_x(f"w[{b.id}]", "w", b.v_min ** 2, b.v_max ** 2)
    th = math.radians(case.theta_max_deg)
    for br in case.branches:
        bf, bt = bmap[br.from_bus], bmap[br.to_bus]
        asm.add_x(f"wz_f[{br.id}]", "w^z", 0.0, bf.v_max ** 2)
        asm.add_x(f"wz_t[{br.id}]", "w^z", 0.0, bt.v_max ** 2)
        vmax2 = bf.v_max * bt.v_max
        asm.add_x(f"wc[{br.id}]", "w^c", 0.0, vmax2)
        asm.add_x(f"ws[{br.id}]", "w^s", -vmax2 * math.sin(th), vmax2 * math.sin(th))
    for n in case.dc.nodes:
        asm.add_x(f"vd[{n.id}]", "v^d", -vbound, vbound, unit="kV")
    for e in case.dc.edges:
        asm.add_x(f"Id[{e.id}]", "I^d", unit="kA")
        asm.add_x(f"vzd[{e.id}]", "v^zd", -2.0 * vbound, 2.0 * vbound, unit="kV")
    gic_transformers = [t for t in case.transformers if case.dc.windings_of(t.id)]
    for t in gic_transformers:
        hv = bmap[case.hv_bus(t)]
        asm.add_x(f"Ieff[{t.id}]", "I_tilde^d", 0.0, cap, unit="kA")
        asm.add_x(f"u[{t.id}]", "u^d", 0.0, hv.v_max * cap, unit="kA")
    for b in case.buses:
        asm.add_x(f"qloss[{b.id}]", "d^qloss", 0.0)
    for g in case.generators:
        asm.add_x(f"dp[{g.id}]", "Delta^p", 0.0, cost=g.cR1 * base)
        asm.add_x(f"dp_sq[{g.id}]", "Delta_check", 0.0, cost=g.cR2 * base * base)
    for b in case.buses:
        for nm in ("lp_plus", "lp_minus", "lq_plus", "lq_minus"):
            asm.add_x(f"{nm}[{b.id}]", "l^" + nm[1] + ("+" if nm.endswith("plus") else "-"), 0.0, cost=kappa)

    # ---------------- generators: bounds, ramping, ramp cost
    for g in case.generators:
        z, fp, fq, rho = f"z_g[{g.id}]", f"fp[{g.id}]", f"fq[{g.id}]", f"rho[{g.id}]"
        dp, dsq = f"dp[{g.id}]", f"dp_sq[{g.id}]"
        gmax = g.gp_max / base
        u = g.ramp_frac if ramp_frac is None else ramp_frac
        asm.add([Cut({fp: 1.0, z: -g.gp_min / base}, GE, 0.0, "gen_limits"),
                 Cut({fp: 1.0, z: -gmax}, LE, 0.0, "gen_limits"),
                 Cut({fq: 1.0, z: -g.gq_min / base}, GE, 0.0, "gen_limits"),
                 Cut({fq: 1.0, z: -g.gq_max / base}, LE, 0.0, "gen_limits")], f"gen_limits[{g.id}]")
        asm.add([Cut({fp: 1.0, rho: -1.0, z: -u * gmax}, LE, 0.0, "ramp_limit"),
                 Cut({rho: 1.0, fp: -1.0, z: -u * gmax}, LE, 0.0, "ramp_limit")], f"ramp_limit[{g.id}]")
        asm.add(Cut({dp: 1.0, fp: -1.0, rho: 1.0}, GE, 0.0, "ramp_excess"), f"ramp_excess[{g.id}]")
        if u > 0:
            pts = lin_points(0.0, cfg.ramp_grid_frac * gmax, cfg.n_points_quadratic)
            asm.add(perspective_oa(dp, dsq, z, pts, tag="ramp_cost_oa"), f"ramp_cost_oa[{g.id}]")

    # ---------------- voltages and lifted products
    for b in case.buses:
        pts = lin_points(b.v_min, b.v_max, cfg.n_points_quadratic)
        asm.add(voltage_square_relax(f"v[{b.id}]", f"w[{b.id}]", b.v_min, b.v_max, pts), f"vsq[{b.id}]")
    for br in case.branches:
        bf, bt = bmap[br.from_bus], bmap[br.to_bus]
        z = f"z_a[{br.id}]"
        for end, bus in (("f", bf), ("t", bt)):
            asm.add(mccormick(z, (0.0, 1.0), f"w[{bus.id}]", (bus.v_min ** 2, bus.v_max ** 2),
                              f"wz_{end}[{br.id}]", tag="switched_square_mc"), f"wz_{end}[{br.id}]")
        asm.add(trig_product_relax(z, f"wc[{br.id}]", f"ws[{br.id}]", f"wz_f[{br.id}]", f"wz_t[{br.id}]",
                                   (bf.v_min, bt.v_min), (bf.v_max, bt.v_max), case.theta_max_deg,
                                   cfg.n_points_rsoc), f"trig[{br.id}]")
        g_, b_ = br.g, br.b
        al = br.tap
        bsh = b_ + br.b_charge / 2.0
        wc, ws, wzf, wzt = f"wc[{br.id}]", f"ws[{br.id}]", f"wz_f[{br.id}]", f"wz_t[{br.id}]"
        flows = {
            f"p_ft[{br.id}]": {wzf: g_ / al ** 2, wc: -g_ / al, ws: -b_ / al},
            f"q_ft[{br.id}]": {wzf: -bsh / al ** 2, wc: b_ / al, ws: -g_ / al},
            f"p_tf[{br.id}]": {wzt: g_, wc: -g_ / al, ws: b_ / al},
            f"q_tf[{br.id}]": {wzt: -bsh, wc: b_ / al, ws: g_ / al},
        }
        for var, expr in flows.items():
            asm.add(Cut(_combine((1.0, var), (-1.0, expr)), EQ, 0.0, "flow_definition"), f"flow:{var}")
        s = br.s_rating / base
        for end in ("ft", "tf"):
            asm.add(thermal_oa(f"p_{end}[{br.id}]", f"q_{end}[{br.id}]", z, s, cfg.n_points_thermal),
                    f"thermal_{end}[{br.id}]")

    # ---------------- nodal balance
    for b in case.buses:
        pbal: dict[str, float] = {f"lp_plus[{b.id}]": 1.0, f"lp_minus[{b.id}]": -1.0, f"w[{b.id}]": -b.shunt_g}
        qbal: dict[str, float] = {f"lq_plus[{b.id}]": 1.0, f"lq_minus[{b.id}]": -1.0, f"w[{b.id}]": b.shunt_b,
                                  f"qloss[{b.id}]": -1.0}
        for g in case.generators:
            if g.bus == b.id:
                pbal[f"fp[{g.id}]"] = 1.0
                qbal[f"fq[{g.id}]"] = 1.0
        for br in case.branches:
            for end, bus in (("ft", br.from_bus), ("tf", br.to_bus)):
                if bus == b.id:
                    pbal[f"p_{end}[{br.id}]"] = pbal.get(f"p_{end}[{br.id}]", 0.0) - 1.0
                    qbal[f"q_{end}[{br.id}]"] = qbal.get(f"q_{end}[{br.id}]", 0.0) - 1.0
        asm.add(Cut({k: v for k, v in pbal.items() if v}, EQ, b.load_p / base, "power_balance_p"),
                f"balance_p[{b.id}]")
        asm.add(Cut({k: v for k, v in qbal.items() if v}, EQ, b.load_q / base, "power_balance_q"),
                f"balance_q[{b.id}]")

    # ---------------- DC circuit
    node_pos = case.dc.node_index()
    ohm_source = {}
    for e in case.dc.edges:
        z = f"z_a[{e.ac_edge_id}]"
        vm, vn = f"vd[{e.from_node}]", f"vd[{e.to_node}]"
        asm.add(mccormick(z, (0.0, 1.0), {vm: 1.0, vn: -1.0}, (-2.0 * vbound, 2.0 * vbound),
                          f"vzd[{e.id}]", tag="dc_switch_mc"), f"dc_switch_mc[{e.id}]")
        w_cut = Cut({f"Id[{e.id}]": 1.0, f"vzd[{e.id}]": -e.admittance}, EQ, 0.0, "dc_ohm_switched")
        # source a * L . omega is in amps; the model current unit is kA
        se, sn = e.admittance * e.length_e_km / DC_UNIT, e.admittance * e.length_n_km / DC_UNIT
        t1 = {z: se} if e.kind == DcEdgeKind.LINE and se else {}
        t2 = {z: sn} if e.kind == DcEdgeKind.LINE and sn else {}
        asm.add_coupling(f"dc_ohm[{e.id}]", w_cut, t1, t2)
        ohm_source[f"dc_ohm[{e.id}]"] = (z, se if t1 else 0.0, sn if t2 else 0.0)
    for n in case.dc.nodes:
        kcl: dict[str, float] = {}
        if n.ground_admittance:
            kcl[f"vd[{n.id}]"] = n.ground_admittance
        for e in case.dc.edges:
            if e.from_node == n.id:
                kcl[f"Id[{e.id}]"] = kcl.get(f"Id[{e.id}]", 0.0) + 1.0
            if e.to_node == n.id:
                kcl[f"Id[{e.id}]"] = kcl.get(f"Id[{e.id}]", 0.0) - 1.0
        asm.add(Cut(kcl, EQ, 0.0, "dc_kcl"), f"dc_kcl[{n.id}]")
    del node_pos

    # ---------------- effective GIC and reactive losses
    for t in gic_transformers:
        # DC edge currents are three-phase totals; effective GIC is per phase
        terms = {f"Id[{e.id}]": e.theta_coeff / 3.0 for e in case.dc.windings_of(t.id)}
        asm.add(effective_gic_relax(f"Ieff[{t.id}]", terms, cap), f"ieff[{t.id}]")
        hv = bmap[case.hv_bus(t)]
        asm.add(mccormick(f"v[{hv.id}]", (hv.v_min, hv.v_max), f"Ieff[{t.id}]", (0.0, cap), f"u[{t.id}]",
                          tag="gic_voltage_mc"), f"gic_voltage_mc[{t.id}]")
    for b in case.buses:
        # qloss (MVar) = k * v * Ieff (A); per unit after dividing by the MVA base
        terms = {f"u[{t.id}]": -t.loss_factor * DC_UNIT / base for t in gic_transformers
                 if case.hv_bus(t) == b.id}
        asm.add(Cut({f"qloss[{b.id}]": 1.0, **terms}, EQ, 0.0, "qloss_definition"), f"qloss[{b.id}]")

    return _finish(asm, case, cfg, ramp_frac, vbound, ohm_source)


def _finish(asm: _Assembler, case, cfg, ramp_frac, vbound, ohm_source) -> StandardFormModel:
    yidx = {v.name: k for k, v in enumerate(asm.y)}
    xidx = {v.name: k for k, v in enumerate(asm.x)}
    first = [(n, c) for blk, n, c in asm.cuts if blk == "first"]
    rec = [(n, c) for blk, n, c in asm.cuts if blk == "recourse"]

    a_rows, b = [], []
    for _, cut in first:
        sgn = -1.0 if cut.sense == LE else 1.0
        if cut.sense == EQ:
            raise RuntimeError("equality rows are not expected in the first stage")
        a_rows.append({k: sgn * v for k, v in cut.coefs.items()})
        b.append(sgn * cut.rhs)
    g_rows, e_rows, h, rsense = [], [], [], []
    for _, cut in rec:
        sgn = -1.0 if cut.sense == LE else 1.0
        g_rows.append({k: sgn * v for k, v in cut.coefs.items() if k in yidx})
        e_rows.append({k: sgn * v for k, v in cut.coefs.items() if k in xidx})
        h.append(sgn * cut.rhs)
        rsense.append(EQ if cut.sense == EQ else GE)
    w_rows = [cut.coefs for _, cut, _, _ in asm.coupling]
    t1_rows = [t1 for _, _, t1, _ in asm.coupling]
    t2_rows = [t2 for _, _, _, t2 in asm.coupling]

    ny, nx = len(asm.y), len(asm.x)
    rows = ([RowInfo("first", k, c.tag, n) for k, (n, c) in enumerate(first)]
            + [RowInfo("recourse", k, c.tag, n) for k, (n, c) in enumerate(rec)]
            + [RowInfo("coupling", k, c.tag, n) for k, (n, c, _, _) in enumerate(asm.coupling)])
    cuts = first + rec + [(n, c) for n, c, _, _ in asm.coupling]
    model = StandardFormModel(
        y_vars=asm.y,
        a=np.array([asm.a.get(v.name, 0.0) for v in asm.y]),
        A=_sparse(a_rows, yidx, ny), b=np.array(b, dtype=float),
        x_vars=asm.x,
        c=np.array([asm.c.get(v.name, 0.0) for v in asm.x]),
        G=_sparse(g_rows, yidx, ny), E=_sparse(e_rows, xidx, nx), h=np.array(h, dtype=float),
        rec_sense=tuple(rsense),
        W=_sparse(w_rows, xidx, nx), T1=_sparse(t1_rows, yidx, ny), T2=_sparse(t2_rows, yidx, ny),
        rows=rows, case=case, config=cfg, ramp_frac=ramp_frac, nu_bound=vbound, cuts=cuts,
    )
    model._ohm_source = ohm_source
    return model
