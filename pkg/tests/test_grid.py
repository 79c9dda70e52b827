import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reserve_duration.grid import (Bus, Line, Network, NetworkError, branched_feeder,
                                   build_distflow_block, chain_feeder, load_network,
                                   network_from_dict, network_to_dict, save_network, star_feeder,
                                   validate_radial)
from reserve_duration.milp import EQ, ModelBuilder, OPTIMAL, solve

from _oracles import downstream_sums


def _solve_fixed(network, p, q, horizon=1, backend="highs", **kw):
    """Fix bus injections (dict bus -> value) and solve the pure network block."""
    mb = ModelBuilder()
    block = build_distflow_block(mb, network, "disp", horizon, **kw)
    for bus in network.buses:
        k = network.bus_index[bus.id]
        for t in range(horizon):
            mb.fix(int(block.p_inj[k, t]), p.get(bus.id, 0.0))
            mb.fix(int(block.q_inj[k, t]), q.get(bus.id, 0.0))
    model = mb.build()
    sol = solve(model, backend)
    assert sol.status == OPTIMAL
    return block, sol.values


def test_two_bus_is_radial():
    assert validate_radial(chain_feeder(2)).ok


def test_triangle_reports_cycle():
    net = Network((Bus("a"), Bus("b"), Bus("c")),
                  (Line("a", "b", 0.01, 0.01, 1), Line("b", "c", 0.01, 0.01, 1), Line("c", "a", 0.01, 0.01, 1)),
                  "a")
    check = validate_radial(net)
    assert not check
    assert check.message.startswith("cycle")
    assert all(b in check.message for b in "abc")


def test_disconnected_component():
    net = Network((Bus("a"), Bus("b"), Bus("c"), Bus("d")),
                  (Line("a", "b", 0.01, 0.01, 1), Line("c", "d", 0.01, 0.01, 1)), "a")
    check = validate_radial(net)
    assert not check and "c" in check.message and "disconnected" in check.message


def test_case_study_size_is_radial():
    net = branched_feeder(97)
    assert len(net.buses) == 97 and len(net.lines) == 96
    assert validate_radial(net).ok


def test_invalid_parameters_rejected():
    with pytest.raises(NetworkError):
        Bus("a", 1.1, 0.9)
    with pytest.raises(NetworkError):
        Line("a", "a", 0.1, 0.1, 1.0)
    with pytest.raises(NetworkError):
        Line("a", "b", -0.1, 0.1, 1.0)


def test_flat_system():
    net = chain_feeder(4)
    block, x = _solve_fixed(net, {}, {}, horizon=3)
    for arr in (block.P, block.Q):
        assert np.all(x[arr[arr >= 0]] == 0.0)
    np.testing.assert_allclose(x[block.v], 1.0, atol=1e-12)
    np.testing.assert_allclose(x[block.pcc], 0.0, atol=1e-12)


def test_two_bus_hand_case():
    net = Network((Bus("b0"), Bus("b1")), (Line("b0", "b1", 0.01, 0.02, 5.0),), "b0", base_kva=1.0)
    block, x = _solve_fixed(net, {"b1": -0.1}, {"b1": -0.05})
    assert x[block.P[1, 0]] == pytest.approx(0.1, abs=1e-9)
    assert x[block.Q[1, 0]] == pytest.approx(0.05, abs=1e-9)
    expected_v = 1 - 2 * (0.01 * 0.1 + 0.02 * 0.05)
    assert expected_v == pytest.approx(0.996)
    assert x[block.v[1, 0]] == pytest.approx(expected_v, abs=1e-9)
    assert x[block.pcc[0]] == pytest.approx(-0.1, abs=1e-9)


def test_two_bus_internal_backend_agrees():
    net = Network((Bus("b0"), Bus("b1")), (Line("b0", "b1", 0.01, 0.02, 5.0),), "b0", base_kva=1.0)
    block, x = _solve_fixed(net, {"b1": -0.1}, {"b1": -0.05}, backend="internal")
    assert x[block.v[1, 0]] == pytest.approx(0.996, abs=1e-9)


def test_three_bus_chain_matches_tree_accumulation():
    net = Network((Bus("b0"), Bus("b1"), Bus("b2")),
                  (Line("b0", "b1", 0.02, 0.01, 5.0), Line("b1", "b2", 0.03, 0.015, 5.0)), "b0", base_kva=1.0)
    p = {"b1": -0.2, "b2": -0.15}
    q = {"b1": -0.05, "b2": -0.02}
    block, x = _solve_fixed(net, p, q)
    parents = {"b1": "b0", "b2": "b1"}
    P_ref = downstream_sums(parents, p)
    Q_ref = downstream_sums(parents, q)
    for bus in ("b1", "b2"):
        k = net.bus_index[bus]
        assert x[block.P[k, 0]] == pytest.approx(P_ref[bus], abs=1e-9)
        assert x[block.Q[k, 0]] == pytest.approx(Q_ref[bus], abs=1e-9)
    v1 = 1 - 2 * (0.02 * P_ref["b1"] + 0.01 * Q_ref["b1"])
    v2 = v1 - 2 * (0.03 * P_ref["b2"] + 0.015 * Q_ref["b2"])
    assert x[block.v[1, 0]] == pytest.approx(v1, abs=1e-9)
    assert x[block.v[2, 0]] == pytest.approx(v2, abs=1e-9)


def _random_injections(net, seed, scale=20.0):
    rng = np.random.default_rng(seed)
    p = {b.id: float(rng.uniform(-scale, scale)) for b in net.buses[1:]}
    q = {b.id: float(rng.uniform(-scale / 4, scale / 4)) for b in net.buses[1:]}
    return p, q


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_root_balance(seed):
    net = branched_feeder(15, n_feeders=3, seed=seed % 7)
    p, q = _random_injections(net, seed)
    block, x = _solve_fixed(net, p, q)
    assert x[block.pcc[0]] == pytest.approx(sum(p.values()), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_superposition(seed_a, seed_b):
    net = branched_feeder(12, n_feeders=2, seed=1)
    pa, qa = _random_injections(net, seed_a, 5.0)
    pb, qb = _random_injections(net, seed_b, 5.0)
    blk, xa = _solve_fixed(net, pa, qa)
    _, xb = _solve_fixed(net, pb, qb)
    _, xab = _solve_fixed(net, {k: pa[k] + pb[k] for k in pa}, {k: qa[k] + qb[k] for k in qa})
    mask = blk.P >= 0
    np.testing.assert_allclose(xab[blk.P[mask]], xa[blk.P[mask]] + xb[blk.P[mask]], atol=1e-9)
    dv = lambda x: x[blk.v] - 1.0
    np.testing.assert_allclose(dv(xab), dv(xa) + dv(xb), atol=1e-9)


def test_voltage_monotone_with_uniform_loads():
    net = chain_feeder(10)
    block, x = _solve_fixed(net, {f"b{k}": -10.0 for k in range(1, 10)},
                            {f"b{k}": -2.0 for k in range(1, 10)}, voltage_limits=False)
    v = x[block.v[:, 0]]
    assert np.all(np.diff(v) <= 1e-12)


def test_flow_limit_binds():
    net = Network((Bus("b0"), Bus("b1")), (Line("b0", "b1", 0.0, 0.0, 1.0),), "b0", base_kva=100.0)
    mb = ModelBuilder()
    block = build_distflow_block(mb, net, "disp", 1)
    mb.fix(int(block.q_inj[1, 0]), 0.0)
    mb.fix(int(block.p_inj[0, 0]), 0.0)
    mb.fix(int(block.q_inj[0, 0]), 0.0)
    mb.set_objective({int(block.pcc[0]): 1.0})
    sol = solve(mb.build(), "highs")
    # octagon vertex on the P axis: full rating at unity power factor
    assert sol.objective == pytest.approx(100.0, abs=1e-6)
    # at 45 degrees the limit is the next vertex
    mb.fix(int(block.q_inj[1, 0]), 100 * np.sqrt(0.5))
    sol = solve(mb.build(), "highs")
    assert sol.objective == pytest.approx(100 * np.sqrt(0.5), abs=1e-6)


def test_network_json_round_trip(tmp_path):
    net = branched_feeder(20, n_feeders=3)
    save_network(net, tmp_path / "net.json")
    again = load_network(tmp_path / "net.json")
    assert network_to_dict(again) == network_to_dict(net)


def test_loader_rejects_cycle():
    data = network_to_dict(star_feeder(4))
    data["lines"].append({"from": "b1", "to": "b2", "r": 0.01, "x": 0.01, "s_max": 1.0})
    with pytest.raises(NetworkError, match="cycle|lines"):
        network_from_dict(data)
    del data["root"]
    with pytest.raises(NetworkError, match="root"):
        network_from_dict(data)
