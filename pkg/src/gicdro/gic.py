"""Deterministic GIC physics: induced sources, DC nodal solve, effective GIC, qloss.

Conventions: an edge current ``I = a (v_from - v_to + nu)`` flows from the
edge's ``from_node`` to its ``to_node``; ground currents ``a_m v_m`` leave
the network at grounded nodes.  Nodal balance reads::

    (L(z) + diag(a_m)) v = J,   J_m = -sum_{out} a nu + sum_{in} a nu
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .netmodel import (Branch, DcEdge, DcEdgeKind, DcNetwork, DcNode, DcNodeKind, PowerCase,
                       TransformerType, turns_ratio)


class SingularCircuitError(ValueError):
    """An energized DC component has no path to ground."""


@dataclass(frozen=True)
class FieldVector:
    nu_e: float
    nu_n: float

    def __post_init__(self):
        if not (np.isfinite(self.nu_e) and np.isfinite(self.nu_n)):
            raise ValueError("field components must be finite")

    def as_tuple(self) -> tuple[float, float]:
        return (self.nu_e, self.nu_n)


@dataclass(frozen=True)
class GicState:
    node_voltage: np.ndarray
    edge_current: np.ndarray
    ground_current: np.ndarray
    effective_gic: dict[int, float]
    qloss: dict[int, float]


def two_node_network(ground_admittance: float = 1.0, edge_admittance: float = 1.0) -> DcNetwork:
    """Two grounded nodes joined by one line edge (node 1 to node 2).

    With unit admittances and a 1 V source the solution is
    ``v = (-1/3, 1/3)`` and an edge current of ``1/3``.
    """
    nodes = (DcNode(1, DcNodeKind.BUS, ground_admittance), DcNode(2, DcNodeKind.BUS, ground_admittance))
    edge = DcEdge(1, 1, 2, edge_admittance, DcEdgeKind.LINE, ac_edge_id=1, resistance=1.0 / edge_admittance)
    return DcNetwork(nodes, (edge,))


def induced_voltages(field: FieldVector, net: DcNetwork) -> np.ndarray:
    """Source voltage (V) on every DC edge; zero on windings."""
    out = np.zeros(len(net.edges))
    for k, e in enumerate(net.edges):
        if e.kind == DcEdgeKind.LINE:
            out[k] = field.nu_n * e.length_n_km + field.nu_e * e.length_e_km
    return out


def _edge_status(net: DcNetwork, z: Mapping[int, float] | None) -> np.ndarray:
    if z is None:
        return np.ones(len(net.edges))
    return np.array([float(z.get(e.ac_edge_id, 1.0)) for e in net.edges])


def nodal_system(net: DcNetwork, z: Mapping[int, float] | None, sources: Sequence[float]):
    """Assemble ``(L(z) + diag(a_m), J)`` as dense arrays."""
    idx = net.node_index()
    n = len(net.nodes)
    Y = np.diag([node.ground_admittance for node in net.nodes]).astype(float)
    J = np.zeros(n)
    on = _edge_status(net, z)
    src = np.asarray(sources, dtype=float)
    for k, e in enumerate(net.edges):
        if on[k] == 0.0:
            continue
        a = e.admittance * on[k]
        i, j = idx[e.from_node], idx[e.to_node]
        Y[i, i] += a
        Y[j, j] += a
        Y[i, j] -= a
        Y[j, i] -= a
        J[i] -= a * src[k]
        J[j] += a * src[k]
    return Y, J


def solve_gic(net: DcNetwork, z: Mapping[int, float] | None, sources: Sequence[float]) -> GicState:
    """Solve the DC circuit for node voltages and edge currents.

    ``z`` maps AC edge ids to on/off status (missing ids are on).  Nodes
    with no energized edge and no grounding are left at 0 V.
    """
    src = np.asarray(sources, dtype=float)
    if src.shape != (len(net.edges),):
        raise ValueError("one source value per DC edge is required")
    Y, J = nodal_system(net, z, src)
    on = _edge_status(net, z)
    n = len(net.nodes)
    v = np.zeros(n)
    ncomp, labels = connected_components(csc_matrix(np.abs(Y) > 0), directed=False)
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        sub = Y[np.ix_(members, members)]
        if not sub.any():
            continue
        if not any(net.nodes[m].ground_admittance > 0 for m in members):
            ids = [net.nodes[m].id for m in members]
            raise SingularCircuitError(f"DC component with nodes {ids} has no grounding")
        v[members] = splu(csc_matrix(sub)).solve(J[members])
    idx = net.node_index()
    current = np.zeros(len(net.edges))
    for k, e in enumerate(net.edges):
        if on[k] != 0.0:
            current[k] = on[k] * e.admittance * (v[idx[e.from_node]] - v[idx[e.to_node]] + src[k])
    ground = np.array([node.ground_admittance for node in net.nodes]) * v
    return GicState(v, current, ground, {}, {})


def effective_gic(ttype: TransformerType, alpha: float, currents: Mapping[str, float]) -> float:
    """Effective GIC (A) of one transformer from its winding currents.

    ``currents`` uses keys ``"high"``, ``"low"``, ``"series"`` and ``"common"``
    as required by the transformer type.
    """
    ttype = TransformerType(ttype)
    try:
        if ttype in (TransformerType.GWYE_DELTA_GSU, TransformerType.DELTA_GWYE_GSU):
            return abs(currents["high"])
        if ttype == TransformerType.GWYE_GWYE_AUTO:
            return abs(((alpha - 1.0) * currents["series"] + currents["common"]) / alpha)
        if ttype == TransformerType.GWYE_GWYE:
            return abs((alpha * currents["high"] + currents["low"]) / alpha)
    except KeyError as exc:
        raise ValueError(f"missing {exc.args[0]} winding current for {ttype.value}") from None
    return 0.0


_WINDING_KEY = {DcEdgeKind.HIGH: "high", DcEdgeKind.LOW: "low",
                DcEdgeKind.SERIES: "series", DcEdgeKind.COMMON: "common"}


def transformer_effective_gic(case: PowerCase, state_current: np.ndarray) -> dict[int, float]:
    """Per-phase effective GIC of every transformer.

    DC edge currents are three-phase totals (edge admittance ``3 / R``), so
    winding currents are divided by three before combining them.
    """
    bmap = {b.id: b for b in case.buses}
    pos = {e.id: k for k, e in enumerate(case.dc.edges)}
    out = {}
    for t in case.transformers:
        cur = {_WINDING_KEY[e.kind]: state_current[pos[e.id]] / 3.0 for e in case.dc.windings_of(t.id)}
        out[t.id] = effective_gic(t.transformer_type, turns_ratio(t, bmap), cur)
    return out


def qloss_at_bus(loss_factors: Sequence[float], v: float, gics: Sequence[float]) -> float:
    """Reactive loss (MVar) at a bus: ``sum k_e * v * I_e``."""
    if len(loss_factors) != len(gics):
        raise ValueError("one effective GIC per loss factor is required")
    return float(sum(k * v * i for k, i in zip(loss_factors, gics)))


def case_gic(case: PowerCase, field: FieldVector, z: Mapping[int, float] | None = None,
             voltages: Mapping[int, float] | None = None) -> GicState:
    """Full GIC evaluation for a case: currents, effective GICs, qloss per bus."""
    src = induced_voltages(field, case.dc)
    state = solve_gic(case.dc, z, src)
    eff = transformer_effective_gic(case, state.edge_current)
    qloss = {}
    for b in case.buses:
        ts = case.transformers_at_bus(b.id)
        vb = 1.0 if voltages is None else voltages.get(b.id, 1.0)
        qloss[b.id] = qloss_at_bus([t.loss_factor for t in ts], vb, [eff[t.id] for t in ts])
    return GicState(state.node_voltage, state.edge_current, state.ground_current, eff, qloss)


def voltage_bound(case: PowerCase, nu_max: float) -> float:
    """Bound on |node voltage| valid for every field of magnitude ``nu_max``.

    Each line source contributes at most its own magnitude to any node
    voltage (superposition and the maximum principle), so the sum of the
    largest source magnitudes bounds every node voltage in every topology.
    """
    total = sum(np.hypot(e.length_n_km, e.length_e_km) for e in case.dc.edges if e.kind == DcEdgeKind.LINE)
    return float(nu_max * total)


def transformer_alpha(case: PowerCase, t: Branch) -> float:
    return turns_ratio(t, {b.id: b for b in case.buses})
