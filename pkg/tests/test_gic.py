import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gicdro import gic
from gicdro.gic import FieldVector, SingularCircuitError
from gicdro.netmodel import DcEdge, DcEdgeKind, DcNetwork, DcNode, DcNodeKind, TransformerType


def random_network(rng, n_nodes=None):
    """Connected DC network with at most six nodes and at least one grounded node."""
    n = int(n_nodes or rng.integers(2, 7))
    grounds = rng.uniform(0.1, 5.0, n) * (rng.random(n) < 0.5)
    if not grounds.any():
        grounds[rng.integers(n)] = rng.uniform(0.1, 5.0)
    nodes = tuple(DcNode(k + 1, DcNodeKind.BUS, float(grounds[k])) for k in range(n))
    pairs = [(int(rng.integers(k)), k) for k in range(1, n)]
    pairs += [tuple(rng.choice(n, 2, replace=False)) for _ in range(int(rng.integers(0, 4)))]
    edges = []
    for k, (i, j) in enumerate(pairs):
        a = float(rng.uniform(0.1, 10.0))
        edges.append(DcEdge(k + 1, int(i) + 1, int(j) + 1, a, DcEdgeKind.LINE, ac_edge_id=k + 1,
                            resistance=1.0 / a))
    return DcNetwork(nodes, tuple(edges))


def dense_oracle(net, sources, on=None):
    """Node voltages from an incidence-matrix assembly and a dense solve."""
    n, m = len(net.nodes), len(net.edges)
    on = np.ones(m) if on is None else np.asarray(on, float)
    inc = np.zeros((m, n))
    for k, e in enumerate(net.edges):
        inc[k, e.from_node - 1] = 1.0
        inc[k, e.to_node - 1] = -1.0
    a = np.array([e.admittance for e in net.edges]) * on
    Y = inc.T @ np.diag(a) @ inc + np.diag([nd.ground_admittance for nd in net.nodes])
    J = -inc.T @ (a * np.asarray(sources))
    v = np.linalg.solve(Y, J)
    current = a * (inc @ v + np.asarray(sources))
    return v, current


def _rel_close(x, y, rel=1e-9):
    scale = max(1.0, float(np.abs(y).max()))
    return float(np.abs(np.asarray(x) - y).max()) <= rel * scale


def test_two_node_example():
    state = gic.solve_gic(gic.two_node_network(), None, [1.0])
    assert state.node_voltage == pytest.approx([-1 / 3, 1 / 3], abs=1e-15)
    assert state.edge_current[0] == pytest.approx(1 / 3, abs=1e-15)


def test_random_networks_match_dense_solve():
    rng = np.random.default_rng(7)
    for _ in range(100):
        net = random_network(rng)
        src = rng.normal(0, 100, len(net.edges))
        state = gic.solve_gic(net, None, src)
        v, cur = dense_oracle(net, src)
        assert _rel_close(state.node_voltage, v)
        assert _rel_close(state.edge_current, cur)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_linearity(seed, scale):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    src = rng.normal(0, 10, len(net.edges))
    base = gic.solve_gic(net, None, src)
    scaled = gic.solve_gic(net, None, scale * src)
    assert np.allclose(scaled.node_voltage, scale * base.node_voltage, rtol=1e-9, atol=1e-9)
    assert np.allclose(scaled.edge_current, scale * base.edge_current, rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_current_balance_and_ground_conservation(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    src = rng.normal(0, 10, len(net.edges))
    state = gic.solve_gic(net, None, src)
    scale = max(1.0, float(np.abs(state.edge_current).max()))
    for k, node in enumerate(net.nodes):
        out = sum(state.edge_current[j] for j, e in enumerate(net.edges) if e.from_node == node.id)
        inn = sum(state.edge_current[j] for j, e in enumerate(net.edges) if e.to_node == node.id)
        assert abs(out - inn + state.ground_current[k]) <= 1e-9 * scale
    assert abs(state.ground_current.sum()) <= 1e-6 * scale


def test_switched_off_edge_carries_nothing():
    rng = np.random.default_rng(3)
    net = random_network(rng, 5)
    src = rng.normal(0, 10, len(net.edges))
    # drop one extra edge if there is one, otherwise a tree edge whose loss keeps the rest grounded
    off = net.edges[-1].ac_edge_id
    on = np.array([0.0 if e.ac_edge_id == off else 1.0 for e in net.edges])
    try:
        state = gic.solve_gic(net, {off: 0}, src)
    except SingularCircuitError:
        pytest.skip("removing the edge floats a component")
    v, cur = dense_oracle(net, src, on)
    assert state.edge_current[-1] == 0.0
    assert _rel_close(state.node_voltage, v)


def test_zero_sources_give_zero_state():
    rng = np.random.default_rng(11)
    net = random_network(rng)
    state = gic.solve_gic(net, None, np.zeros(len(net.edges)))
    assert not state.node_voltage.any() and not state.edge_current.any()


def test_floating_component_is_reported():
    nodes = (DcNode(1, DcNodeKind.BUS, 1.0), DcNode(2, DcNodeKind.BUS, 0.0), DcNode(3, DcNodeKind.BUS, 0.0))
    edges = (DcEdge(1, 2, 3, 1.0, DcEdgeKind.LINE, 1),)
    with pytest.raises(SingularCircuitError, match=r"\[2, 3\]"):
        gic.solve_gic(DcNetwork(nodes, edges), None, [1.0])


def test_induced_voltages(epri21):
    assert not gic.induced_voltages(FieldVector(0.0, 0.0), epri21.dc).any()
    net = DcNetwork((DcNode(1, DcNodeKind.BUS, 1.0), DcNode(2, DcNodeKind.BUS, 1.0)),
                    (DcEdge(1, 1, 2, 1.0, DcEdgeKind.LINE, 1, length_n_km=0.0, length_e_km=77.2),))
    assert gic.induced_voltages(FieldVector(1.0, 0.0), net)[0] == pytest.approx(77.2)
    src = gic.induced_voltages(FieldVector(5.6, 6.6), epri21.dc)
    line1 = next(k for k, e in enumerate(epri21.dc.edges) if e.ac_edge_id == 1)
    e = epri21.dc.edges[line1]
    assert src[line1] == pytest.approx(6.6 * e.length_n_km + 5.6 * e.length_e_km)
    windings = [k for k, e in enumerate(epri21.dc.edges) if e.kind != DcEdgeKind.LINE]
    assert not src[windings].any()


# (type, alpha, currents, hand-evaluated effective GIC)
EFFECTIVE_TABLE = [
    (TransformerType.GWYE_DELTA_GSU, 1.0, {"high": -5.0}, 5.0),
    (TransformerType.GWYE_DELTA_GSU, 15.7, {"high": 7.25}, 7.25),
    (TransformerType.DELTA_GWYE_GSU, 2.0, {"high": -0.5}, 0.5),
    (TransformerType.GWYE_GWYE_AUTO, 2.0, {"series": 3.0, "common": 1.0}, 2.0),
    (TransformerType.GWYE_GWYE_AUTO, 2.0, {"series": -3.0, "common": 1.0}, 1.0),
    (TransformerType.GWYE_GWYE_AUTO, 4.0, {"series": 2.0, "common": -10.0}, 1.0),
    (TransformerType.GWYE_GWYE, 2.0, {"high": 1.0, "low": 2.0}, 2.0),
    (TransformerType.GWYE_GWYE, 2.0, {"high": 1.0, "low": -2.0}, 0.0),
    (TransformerType.GWYE_GWYE, 0.5, {"high": -4.0, "low": 1.0}, 2.0),
    (TransformerType.THREE_WINDING_UNGROUNDED, 2.0, {}, 0.0),
    (TransformerType.THREE_WINDING_UNGROUNDED, 1.0, {"high": 100.0}, 0.0),
    (TransformerType.THREE_WINDING_UNGROUNDED, 3.0, {"high": -7.0, "low": 9.0}, 0.0),
]


@pytest.mark.parametrize("ttype,alpha,currents,expected", EFFECTIVE_TABLE)
def test_effective_gic_table(ttype, alpha, currents, expected):
    assert gic.effective_gic(ttype, alpha, currents) == expected


def test_effective_gic_missing_winding():
    with pytest.raises(ValueError, match="series"):
        gic.effective_gic(TransformerType.GWYE_GWYE_AUTO, 2.0, {"common": 1.0})


def test_qloss():
    assert gic.qloss_at_bus([1.6], 1.0, [10.0]) == pytest.approx(16.0)
    assert gic.qloss_at_bus([1.6, 0.5], 1.02, [10.0, 4.0]) == pytest.approx(
        gic.qloss_at_bus([1.6], 1.02, [10.0]) + gic.qloss_at_bus([0.5], 1.02, [4.0]))
    assert gic.qloss_at_bus([], 1.0, []) == 0.0


def test_toy4_series_loop(toy4):
    # one loop: parallel twin lines, two GSU windings and two substation groundings in series
    field = FieldVector(5.6, 6.6)
    line = next(e for e in toy4.dc.edges if e.ac_edge_id == 1)
    emf = field.nu_n * line.length_n_km + field.nu_e * line.length_e_km
    r_line = toy4.branch(1).r * 345.0 ** 2 / 100.0
    r_loop = r_line / 3.0 / 2.0 + 2 * (0.5 / 3.0) + 2 * 0.2
    loop_current = emf / r_loop
    state = gic.case_gic(toy4, field)
    assert state.effective_gic[3] == pytest.approx(abs(loop_current) / 3.0, rel=1e-12)
    assert state.effective_gic[4] == pytest.approx(abs(loop_current) / 3.0, rel=1e-12)
    assert state.qloss[2] == pytest.approx(0.1 * abs(loop_current) / 3.0, rel=1e-12)
    assert state.qloss[1] == 0.0


def test_toy3_dangling_line_carries_no_gic(toy3):
    state = gic.case_gic(toy3, FieldVector(3.0, 4.0))
    assert all(abs(v) <= 1e-12 for v in state.effective_gic.values())
    assert all(abs(v) <= 1e-12 for v in state.qloss.values())


def test_field_negation_symmetry(epri21):
    f = FieldVector(4.3, 10.7)
    pos = gic.case_gic(epri21, f)
    neg = gic.case_gic(epri21, FieldVector(-4.3, -10.7))
    assert np.allclose(neg.node_voltage, -pos.node_voltage, atol=1e-9)
    assert np.allclose(neg.edge_current, -pos.edge_current, atol=1e-9)
    for t, val in pos.effective_gic.items():
        assert neg.effective_gic[t] == pytest.approx(val, rel=1e-12, abs=1e-12)


def test_zero_field_gives_zero_qloss(epri21):
    state = gic.case_gic(epri21, FieldVector(0.0, 0.0))
    assert all(v == 0.0 for v in state.qloss.values())


def test_epri21_gic_below_cap(epri21):
    state = gic.case_gic(epri21, FieldVector(11.5 * math.cos(1.2), 11.5 * math.sin(1.2)))
    assert max(state.effective_gic.values()) < epri21.gic_cap()
