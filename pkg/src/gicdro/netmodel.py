"""Power-system data model, JSON case files and the derived DC (GIC) circuit.

Case documents are JSON objects::

    {
      "version": 1,
      "name": "...",
      "base_mva": 100.0,
      "buses": [...], "branches": [...], "generators": [...], "substations": [...],
      "params": {"kappa": 1000.0, "theta_max_deg": 30.0,
                 "gic_cap_rule": "twice_max_line_rating"}
    }

Field names inside the arrays match the dataclasses below.  Loads and
ratings are MW/MVar/MVA, impedances are per unit on ``base_mva``, winding and
ground resistances are ohms per phase.  A base overlay has the same layout;
its records are merged into the case by ``id``, field by field.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import geomag

SCHEMA_VERSION = 1
GIC_CAP_RULES = ("twice_max_line_rating",)


class CaseError(ValueError):
    """Schema, reference or data error in a case document."""


class TransformerType(str, Enum):
    GWYE_DELTA_GSU = "GwyeDeltaGsu"
    DELTA_GWYE_GSU = "DeltaGwyeGsu"
    GWYE_GWYE_AUTO = "GwyeGwyeAuto"
    GWYE_GWYE = "GwyeGwye"
    THREE_WINDING_UNGROUNDED = "ThreeWindingUngrounded"


class DcNodeKind(str, Enum):
    BUS = "BusNode"
    NEUTRAL = "NeutralNode"


class DcEdgeKind(str, Enum):
    LINE = "Line"
    SERIES = "SeriesWinding"
    COMMON = "CommonWinding"
    HIGH = "HighWinding"
    LOW = "LowWinding"
    GROUND = "GroundLead"


@dataclass(frozen=True)
class Bus:
    id: int
    substation_id: int
    base_kv: float
    load_p: float = 0.0
    load_q: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float = 0.0
    x: float = 0.0
    b_charge: float = 0.0
    tap: float = 1.0
    s_rating: float = 0.0
    is_transformer: bool = False
    transformer_type: TransformerType | None = None
    loss_factor: float = 0.0
    length_km: float = 0.0
    winding1_ohm: float | None = None
    winding2_ohm: float | None = None
    dc_resistance_ohm: float | None = None
    name: str = ""

    @property
    def g(self) -> float:
        return self.r / (self.r ** 2 + self.x ** 2)

    @property
    def b(self) -> float:
        return -self.x / (self.r ** 2 + self.x ** 2)


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    gp_min: float
    gp_max: float
    gq_min: float
    gq_max: float
    c0: float
    c1: float
    c2: float
    cR1: float
    cR2: float
    ramp_frac: float = 0.0


@dataclass(frozen=True)
class Substation:
    id: int
    latitude: float
    longitude: float
    ground_resistance: float | None = None

    @property
    def point(self) -> geomag.GeoPoint:
        return geomag.GeoPoint(self.latitude, self.longitude)


@dataclass(frozen=True)
class DcNode:
    id: int
    kind: DcNodeKind
    ground_admittance: float
    bus_id: int | None = None
    substation_id: int | None = None


@dataclass(frozen=True)
class DcEdge:
    id: int
    from_node: int
    to_node: int
    admittance: float
    kind: DcEdgeKind
    ac_edge_id: int
    length_n_km: float = 0.0
    length_e_km: float = 0.0
    theta_coeff: float = 0.0
    resistance: float = 0.0


@dataclass(frozen=True)
class DcNetwork:
    nodes: tuple[DcNode, ...]
    edges: tuple[DcEdge, ...]

    def node_index(self) -> dict[int, int]:
        return {n.id: k for k, n in enumerate(self.nodes)}

    def windings_of(self, ac_edge_id: int) -> list[DcEdge]:
        return [e for e in self.edges if e.ac_edge_id == ac_edge_id and e.kind != DcEdgeKind.LINE]


@dataclass(frozen=True)
class PowerCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    substations: tuple[Substation, ...]
    dc: DcNetwork
    kappa: float = 1000.0
    theta_max_deg: float = 30.0
    gic_cap_rule: str = "twice_max_line_rating"
    base_mva: float = 100.0
    name: str = "case"

    def bus(self, bus_id: int) -> Bus:
        return self._lookup(self.buses, bus_id, "bus")

    def branch(self, branch_id: int) -> Branch:
        return self._lookup(self.branches, branch_id, "branch")

    def generator(self, gen_id: int) -> Generator:
        return self._lookup(self.generators, gen_id, "generator")

    def substation(self, sub_id: int) -> Substation:
        return self._lookup(self.substations, sub_id, "substation")

    @staticmethod
    def _lookup(items, key, what):
        for it in items:
            if it.id == key:
                return it
        raise KeyError(f"no {what} with id {key}")

    @property
    def transformers(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.is_transformer)

    def hv_bus(self, br: Branch) -> int:
        return high_voltage_bus(br, {b.id: b for b in self.buses})

    def transformers_at_bus(self, bus_id: int) -> list[Branch]:
        """Transformers whose high-voltage side is ``bus_id``."""
        return [t for t in self.transformers if self.hv_bus(t) == bus_id]

    def gic_cap(self) -> float:
        """Upper bound on any effective GIC (amps).

        Twice the largest AC current bound ``s_e / min(v_min_i, v_min_j)``
        over all branches, evaluated with ``s_e`` in MVA.
        """
        vmin = {b.id: b.v_min for b in self.buses}
        best = max(br.s_rating / min(vmin[br.from_bus], vmin[br.to_bus]) for br in self.branches)
        return 2.0 * best


def high_voltage_bus(br: Branch, buses: Mapping[int, Bus]) -> int:
    kf, kt = buses[br.from_bus].base_kv, buses[br.to_bus].base_kv
    return br.from_bus if kf >= kt else br.to_bus


def turns_ratio(br: Branch, buses: Mapping[int, Bus]) -> float:
    """High-to-low voltage ratio of a transformer from its bus voltage levels."""
    kf, kt = buses[br.from_bus].base_kv, buses[br.to_bus].base_kv
    return max(kf, kt) / min(kf, kt)


# ---------------------------------------------------------------- DC circuit


def _line_resistance(br: Branch, buses: Mapping[int, Bus], base_mva: float) -> float:
    if br.dc_resistance_ohm is not None:
        return br.dc_resistance_ohm
    kv = buses[br.from_bus].base_kv
    return br.r * kv * kv / base_mva


def dc_from_ac(buses, branches, substations, base_mva: float = 100.0) -> DcNetwork:
    """Build the per-phase-equivalent DC network of a case.

    Bus nodes are created for every bus touched by a DC edge; one neutral
    node per substation hosting a grounded winding.  Edge admittances are
    ``3 / R`` (three phases in parallel), neutral grounding ``1 / R_ground``.
    """
    bmap = {b.id: b for b in buses}
    smap = {s.id: s for s in substations}
    edges: list[tuple] = []  # (from_key, to_key, R, kind, ac_id, ln, le, theta)
    neutral_subs: set[int] = set()

    def neutral(bus_id):
        sid = bmap[bus_id].substation_id
        sub = smap[sid]
        if sub.ground_resistance is None or sub.ground_resistance <= 0:
            raise CaseError(f"transformer at bus {bus_id} sits in ungrounded substation {sid}")
        neutral_subs.add(sid)
        return ("n", sid)

    for br in branches:
        if not br.is_transformer:
            r_ohm = _line_resistance(br, bmap, base_mva)
            if r_ohm <= 0:
                raise CaseError(f"branch {br.id}: non-positive DC resistance")
            s_from = smap[bmap[br.from_bus].substation_id].point
            s_to = smap[bmap[br.to_bus].substation_id].point
            ln, le = geomag.scaled_components(s_from, s_to, br.length_km)
            edges.append((("b", br.from_bus), ("b", br.to_bus), r_ohm, DcEdgeKind.LINE, br.id, ln, le, 0.0))
            continue
        ttype = br.transformer_type
        if ttype is None:
            raise CaseError(f"transformer branch {br.id} has no transformer_type")
        ttype = TransformerType(ttype)
        if ttype == TransformerType.THREE_WINDING_UNGROUNDED:
            continue
        hv = high_voltage_bus(br, bmap)
        lv = br.to_bus if hv == br.from_bus else br.from_bus
        alpha = turns_ratio(br, bmap)
        w1, w2 = br.winding1_ohm, br.winding2_ohm
        if ttype in (TransformerType.GWYE_DELTA_GSU, TransformerType.DELTA_GWYE_GSU):
            _need(br, w1)
            edges.append((("b", hv), neutral(hv), w1, DcEdgeKind.HIGH, br.id, 0.0, 0.0, 1.0))
        elif ttype == TransformerType.GWYE_GWYE_AUTO:
            _need(br, w1, w2)
            if alpha <= 1.0:
                raise CaseError(f"autotransformer {br.id} needs distinct voltage levels")
            edges.append((("b", hv), ("b", lv), w1, DcEdgeKind.SERIES, br.id, 0.0, 0.0, (alpha - 1.0) / alpha))
            edges.append((("b", lv), neutral(lv), w2, DcEdgeKind.COMMON, br.id, 0.0, 0.0, 1.0 / alpha))
        elif ttype == TransformerType.GWYE_GWYE:
            _need(br, w1, w2)
            edges.append((("b", hv), neutral(hv), w1, DcEdgeKind.HIGH, br.id, 0.0, 0.0, 1.0))
            edges.append((("b", lv), neutral(lv), w2, DcEdgeKind.LOW, br.id, 0.0, 0.0, 1.0 / alpha))
        else:  # pragma: no cover - enum is exhaustive
            raise CaseError(f"unknown transformer type {ttype}")

    bus_keys = sorted({k for e in edges for k in e[:2] if k[0] == "b"}, key=lambda k: k[1])
    neutral_keys = [("n", s) for s in sorted(neutral_subs)]
    nodes, key_to_id = [], {}
    for k in bus_keys:
        key_to_id[k] = len(nodes) + 1
        nodes.append(DcNode(len(nodes) + 1, DcNodeKind.BUS, 0.0, bus_id=k[1],
                            substation_id=bmap[k[1]].substation_id))
    for k in neutral_keys:
        key_to_id[k] = len(nodes) + 1
        nodes.append(DcNode(len(nodes) + 1, DcNodeKind.NEUTRAL, 1.0 / smap[k[1]].ground_resistance,
                            substation_id=k[1]))
    dc_edges = []
    for i, (f, t, r_ohm, kind, ac, ln, le, theta) in enumerate(edges, start=1):
        if r_ohm <= 0:
            raise CaseError(f"branch {ac}: non-positive winding resistance")
        dc_edges.append(DcEdge(i, key_to_id[f], key_to_id[t], 3.0 / r_ohm, kind, ac, ln, le, theta, r_ohm))
    return DcNetwork(tuple(nodes), tuple(dc_edges))


def _need(br: Branch, *vals):
    if any(v is None for v in vals):
        raise CaseError(f"transformer {br.id} is missing winding resistance data")


# ------------------------------------------------------------- (de)serializing


def _coerce(cls, rec: Mapping[str, Any], path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(rec) - set(known)
    if unknown:
        raise CaseError(f"{path}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in rec:
            continue
        val = rec[name]
        if name == "transformer_type" and val is not None:
            try:
                val = TransformerType(val)
            except ValueError:
                raise CaseError(f"{path}.transformer_type: unknown transformer type {val!r}") from None
        kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise CaseError(f"{path}: {exc}") from None


def _records(doc, key):
    val = doc.get(key)
    if not isinstance(val, list):
        raise CaseError(f"{key}: expected an array")
    for i, rec in enumerate(val):
        if not isinstance(rec, dict):
            raise CaseError(f"{key}[{i}]: expected an object")
    return val


def merge_overlay(doc: Mapping[str, Any], overlay: Mapping[str, Any]) -> dict:
    """Merge an overlay into a case document by record id, field by field."""
    out = copy.deepcopy(dict(doc))
    for key in ("buses", "branches", "generators", "substations"):
        if key not in overlay:
            continue
        by_id = {rec["id"]: rec for rec in out.get(key, [])}
        for i, rec in enumerate(overlay[key]):
            if "id" not in rec:
                raise CaseError(f"overlay {key}[{i}]: missing id")
            if rec["id"] not in by_id:
                raise CaseError(f"overlay {key}[{i}]: id {rec['id']} not present in the case")
            by_id[rec["id"]].update(rec)
    if "params" in overlay:
        out.setdefault("params", {}).update(overlay["params"])
    return out


def case_from_dict(doc: Mapping[str, Any]) -> PowerCase:
    if not isinstance(doc, Mapping):
        raise CaseError("case document must be a JSON object")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise CaseError(f"version: unsupported schema version {version}")
    buses = tuple(_coerce(Bus, r, f"buses[{i}]") for i, r in enumerate(_records(doc, "buses")))
    branch_recs = _records(doc, "branches")
    if not branch_recs:
        raise CaseError("branches: empty branch list")
    branches = tuple(_coerce(Branch, r, f"branches[{i}]") for i, r in enumerate(branch_recs))
    gens = tuple(_coerce(Generator, r, f"generators[{i}]") for i, r in enumerate(_records(doc, "generators")))
    subs = tuple(_coerce(Substation, r, f"substations[{i}]") for i, r in enumerate(_records(doc, "substations")))
    params = doc.get("params", {})
    if not isinstance(params, Mapping):
        raise CaseError("params: expected an object")
    extra = set(params) - {"kappa", "theta_max_deg", "gic_cap_rule"}
    if extra:
        raise CaseError(f"params: unknown field(s) {sorted(extra)}")
    base_mva = float(doc.get("base_mva", 100.0))
    errors = _validate_parts(buses, branches, gens, subs)
    if errors:
        raise CaseError("; ".join(errors))
    dc = dc_from_ac(buses, branches, subs, base_mva)
    case = PowerCase(buses, branches, gens, subs, dc,
                     kappa=float(params.get("kappa", 1000.0)),
                     theta_max_deg=float(params.get("theta_max_deg", 30.0)),
                     gic_cap_rule=str(params.get("gic_cap_rule", "twice_max_line_rating")),
                     base_mva=base_mva, name=str(doc.get("name", "case")))
    errors = validate(case)
    if errors:
        raise CaseError("; ".join(errors))
    return case


def load_case(source: str | Path | Mapping[str, Any], overlay: str | Path | Mapping | None = None) -> PowerCase:
    """Parse a case from a JSON string, a path or an already-decoded mapping."""
    doc = _read_doc(source)
    if overlay is not None:
        doc = merge_overlay(doc, _read_doc(overlay))
    return case_from_dict(doc)


def _read_doc(source) -> dict:
    if isinstance(source, Mapping):
        return dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def case_to_dict(case: PowerCase) -> dict:
    def rec(obj):
        d = asdict(obj)
        for k, v in list(d.items()):
            if isinstance(v, Enum):
                d[k] = v.value
        return d

    return {
        "version": SCHEMA_VERSION,
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [rec(b) for b in case.buses],
        "branches": [rec(b) for b in case.branches],
        "generators": [rec(g) for g in case.generators],
        "substations": [rec(s) for s in case.substations],
        "params": {"kappa": case.kappa, "theta_max_deg": case.theta_max_deg,
                   "gic_cap_rule": case.gic_cap_rule},
    }


def serialize(case: PowerCase) -> str:
    return json.dumps(case_to_dict(case), indent=1)


# ----------------------------------------------------------------- validation


def _validate_parts(buses, branches, gens, subs) -> list[str]:
    errs = []
    for kind, items in (("bus", buses), ("branch", branches), ("generator", gens), ("substation", subs)):
        ids = [it.id for it in items]
        if len(ids) != len(set(ids)):
            errs.append(f"duplicate {kind} ids")
    sub_ids = {s.id for s in subs}
    bus_ids = {b.id for b in buses}
    for b in buses:
        if b.substation_id not in sub_ids:
            errs.append(f"bus {b.id}: dangling substation {b.substation_id}")
        if not (0 < b.v_min <= b.v_max):
            errs.append(f"bus {b.id}: voltage bounds must satisfy 0 < v_min <= v_max")
        if not all(math.isfinite(v) for v in (b.load_p, b.load_q, b.shunt_g, b.shunt_b)):
            errs.append(f"bus {b.id}: non-finite load or shunt")
        if b.base_kv <= 0:
            errs.append(f"bus {b.id}: base_kv must be positive")
    for br in branches:
        if br.from_bus not in bus_ids or br.to_bus not in bus_ids:
            errs.append(f"branch {br.id}: dangling bus reference")
        if br.r < 0 or (br.r == 0 and br.x == 0):
            errs.append(f"branch {br.id}: impedance must be nonzero with r >= 0")
        if br.s_rating <= 0:
            errs.append(f"branch {br.id}: s_rating must be positive")
        if br.tap <= 0:
            errs.append(f"branch {br.id}: tap must be positive")
        if br.loss_factor < 0:
            errs.append(f"branch {br.id}: negative loss factor")
        if br.length_km < 0:
            errs.append(f"branch {br.id}: negative length")
        if br.is_transformer != (br.transformer_type is not None):
            errs.append(f"branch {br.id}: transformer flag and type disagree")
    for g in gens:
        if g.bus not in bus_ids:
            errs.append(f"generator {g.id}: dangling bus {g.bus}")
        if g.gp_min > g.gp_max or g.gq_min > g.gq_max:
            errs.append(f"generator {g.id}: inverted output bounds")
        if not 0.0 <= g.ramp_frac <= 1.0:
            errs.append(f"generator {g.id}: ramp_frac outside [0, 1]")
    for s in subs:
        if not -90.0 <= s.latitude <= 90.0:
            errs.append(f"substation {s.id}: latitude outside [-90, 90]")
        if s.ground_resistance is not None and s.ground_resistance <= 0:
            errs.append(f"substation {s.id}: non-positive ground resistance")
    return errs


def validate(case: PowerCase) -> list[str]:
    """Return a list of problems; empty when the case is consistent."""
    errs = _validate_parts(case.buses, case.branches, case.generators, case.substations)
    if case.kappa < 0:
        errs.append("params.kappa must be nonnegative")
    if not 0 < case.theta_max_deg < 90:
        errs.append("params.theta_max_deg must lie in (0, 90)")
    if case.gic_cap_rule not in GIC_CAP_RULES:
        errs.append(f"params.gic_cap_rule must be one of {GIC_CAP_RULES}")
    if errs:
        return errs
    node_ids = {n.id for n in case.dc.nodes}
    for e in case.dc.edges:
        if e.from_node not in node_ids or e.to_node not in node_ids:
            errs.append(f"DC edge {e.id}: dangling node")
        if e.admittance <= 0:
            errs.append(f"DC edge {e.id}: non-positive admittance")
        if e.kind != DcEdgeKind.LINE and (e.length_n_km or e.length_e_km):
            errs.append(f"DC edge {e.id}: winding with nonzero length")
    for t in case.transformers:
        if t.transformer_type != TransformerType.THREE_WINDING_UNGROUNDED and not case.dc.windings_of(t.id):
            errs.append(f"transformer {t.id} lacks a DC representation")
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    if case.buses:
        start = case.buses[0].id
        seen, stack = {start}, [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(case.buses):
            errs.append("AC network is not connected with all branches in service")
    return errs


# --------------------------------------------------------------- shipped case


def _data_doc(name: str) -> dict:
    return json.loads(resources.files("gicdro").joinpath("data", name).read_text())


def epri21_document(overlay: str | Path | Mapping | None = None) -> dict:
    """The embedded case document merged with a base overlay.

    Without an explicit overlay the shipped default base data (loads,
    impedances, ratings, shunts) is used.
    """
    base = _data_doc("epri21_base.json") if overlay is None else _read_doc(overlay)
    return merge_overlay(_data_doc("epri21.json"), base)


def build_epri21(overlay: str | Path | Mapping | None = None) -> PowerCase:
    return case_from_dict(epri21_document(overlay))


SHIPPED_CASES = ("epri21", "toy3", "toy4")


def shipped_case(name: str) -> PowerCase:
    """One of the embedded cases: ``epri21`` (with default base data), ``toy3`` or ``toy4``."""
    if name == "epri21":
        return build_epri21()
    if name not in SHIPPED_CASES:
        raise KeyError(f"unknown shipped case {name!r}; expected one of {SHIPPED_CASES}")
    return case_from_dict(_data_doc(f"{name}.json"))
