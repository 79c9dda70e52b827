import numpy as np
import pytest

from reserve_duration.ders import (Battery, DerError, EvEvent, Fleet, Generator, HeatPump,
                                   ScenarioSample, apply_scenario, build_battery_block, build_ev_block,
                                   build_generator_block, build_heatpump_block, read_ev_events_csv)
from reserve_duration.milp import OPTIMAL, ModelBuilder, solve

from _oracles import simulate_heat_pump

H = 24


def _solve(mb, objective, backend="highs"):
    mb.set_objective(objective)
    model = mb.build()
    sol = solve(model, backend)
    assert sol.status == OPTIMAL, sol.info
    return sol.values


def _flat(value, n=H):
    return [value] * n


def test_generator_night_forces_zero():
    mb = ModelBuilder()
    blk = build_generator_block(mb, Generator("pv", "b1", 10.0, 11.0, _flat(0.0)), "disp", H)
    x = _solve(mb, {int(i): 1.0 for i in blk.vars["p"]})
    assert np.all(x[blk.vars["p"]] == 0.0)


def test_generator_upper_bound_from_capacity_factor():
    mb = ModelBuilder()
    blk = build_generator_block(mb, Generator("pv", "b1", 10.0, 11.0, _flat(0.5)), "disp", H)
    x = _solve(mb, {int(i): 1.0 for i in blk.vars["p"]})
    np.testing.assert_allclose(x[blk.vars["p"]], 5.0, atol=1e-9)
    assert blk.q is not None


def test_generator_rejects_bad_cf():
    with pytest.raises(DerError):
        Generator("pv", "b1", 10.0, 11.0, _flat(1.2))


def test_heatpump_steady_state_power():
    # hold T at t_min = ambient + 12 K; cheapest schedule is the steady-state balance
    hp = HeatPump("hp", "b1", p_max=5.0, cop=3.0, r_th=2.0, c_th=10.0, t_min=20.0, t_max=24.0,
                  t_init=20.0, ambient_profile=_flat(8.0))
    mb = ModelBuilder()
    blk = build_heatpump_block(mb, hp, "disp", H)
    x = _solve(mb, {int(i): -1.0 for i in blk.vars["p"]})
    assert 12 / (2 * 3) == 2.0
    np.testing.assert_allclose(x[blk.vars["p"]], 2.0, atol=1e-9)
    assert blk.q is None


def test_heatpump_zero_heat_loss():
    hp = HeatPump("hp", "b1", 5.0, 3.0, 2.0, 10.0, 20.0, 24.0, 22.0, _flat(22.0))
    mb = ModelBuilder()
    blk = build_heatpump_block(mb, hp, "disp", H)
    x = _solve(mb, {int(i): -1.0 for i in blk.vars["p"]})
    np.testing.assert_allclose(x[blk.vars["p"]], 0.0, atol=1e-9)


def test_heatpump_recurrence_matches_forward_simulation():
    amb = list(2 + 6 * np.sin(np.linspace(0, 2 * np.pi, H)))
    hp = HeatPump("hp", "b1", 6.0, 3.2, 2.0, 10.0, 20.0, 24.0, 21.0, amb)
    mb = ModelBuilder()
    blk = build_heatpump_block(mb, hp, "disp", H)
    # favour late heating so the trajectory is non-trivial
    x = _solve(mb, {int(i): float(t) for t, i in enumerate(blk.vars["p"])})
    temps = simulate_heat_pump(21.0, amb, x[blk.vars["p"]], 2.0, 10.0, 3.2)
    assert np.max(np.abs(temps - x[blk.vars["T"]])) <= 1e-9
    assert abs(x[blk.vars["T"]][-1] - x[blk.vars["T"]][0]) <= 1e-6


def test_battery_soc_step():
    bess = Battery("bess", "b1", e_cap=75.0, p_ch_max=5.0, p_dis_max=5.0, eta_ch=1.0, eta_dis=1.0,
                   soc_min=0.0, soc_max=1.0, soc_init=0.5)
    mb = ModelBuilder()
    blk = build_battery_block(mb, bess, "disp", 2)
    mb.fix(int(blk.vars["p_ch"][0]), 1.0)
    x = _solve(mb, {})
    assert x[blk.vars["soc"][1]] - x[blk.vars["soc"][0]] == pytest.approx(1 / 75, abs=1e-12)


def test_battery_round_trip_identity():
    bess = Battery("bess", "b1", e_cap=75.0, p_ch_max=10.0, p_dis_max=10.0, eta_ch=0.95, eta_dis=0.95,
                   soc_min=0.1, soc_max=0.9, soc_init=0.5)
    mb = ModelBuilder()
    blk = build_battery_block(mb, bess, "disp", H)
    # reward charging early and discharging late so the battery cycles
    obj = {}
    for t in range(H):
        obj[int(blk.vars["p_ch"][t])] = 1.0 if t < 12 else -2.0
        obj[int(blk.vars["p_dis"][t])] = 2.0 if t >= 12 else -1.0
    x = _solve(mb, obj)
    charged = x[blk.vars["p_ch"]].sum()
    discharged = x[blk.vars["p_dis"]].sum()
    assert charged > 1.0
    assert abs(discharged - 0.9025 * charged) <= 1e-6
    assert np.all(x[blk.vars["p_ch"]] * x[blk.vars["p_dis"]] <= 1e-6)
    assert abs(x[blk.vars["soc"]][-1] - x[blk.vars["soc"]][0]) <= 1e-6


def test_battery_without_charging_cannot_cycle():
    bess = Battery("bess", "b1", 10.0, 0.0, 5.0, soc_min=0.1, soc_max=0.9, soc_init=0.5)
    mb = ModelBuilder()
    blk = build_battery_block(mb, bess, "disp", H)
    x = _solve(mb, {int(i): 1.0 for i in blk.vars["p_dis"]})
    assert np.all(np.diff(x[blk.vars["soc"]]) <= 1e-12)
    assert x[blk.vars["p_dis"]].sum() == pytest.approx(0.0, abs=1e-9)
    assert "b" not in blk.vars


def test_ev_without_v2g_never_discharges():
    ev = EvEvent("car", "b1", 8, 17, e_req=10.0)
    mb = ModelBuilder()
    blk = build_ev_block(mb, ev, "disp", H)
    assert "p_dis" not in blk.vars
    assert len(blk.injection) == 1 and blk.q is None
    x = _solve(mb, {int(i): 1.0 for i in blk.vars["p_ch"] if i >= 0})
    inj = blk.injection_value(x)
    assert np.all(inj <= 0.0)
    assert np.all(inj[:8] == 0.0) and np.all(inj[17:] == 0.0)


def test_ev_tight_window():
    ev = EvEvent("car", "b1", 3, 5, e_req=14.0, p_max=7.0, eta_ch=1.0, soc_arrive=0.2)
    for sign in (1.0, -1.0):
        mb = ModelBuilder()
        blk = build_ev_block(mb, ev, "disp", H)
        x = _solve(mb, {int(i): sign for i in blk.vars["p_ch"] if i >= 0})
        np.testing.assert_allclose(x[blk.vars["p_ch"][3:5]], 7.0, atol=1e-9)


def test_ev_minimum_average_rate():
    ev = EvEvent("car", "b1", 0, 4, e_req=4.0, p_max=7.0, eta_ch=1.0, r_min=1.0, soc_arrive=0.5)
    mb = ModelBuilder()
    blk = build_ev_block(mb, ev, "disp", H)
    e = blk.vars["e"]
    x = _solve(mb, {int(e[2]): -1.0})
    assert x[e[2]] - x[e[0]] == pytest.approx(2.0, abs=1e-9)


def test_ev_v2g_exclusive():
    ev = EvEvent("car", "b1", 0, 10, e_req=5.0, eta_ch=0.9, eta_dis=0.9, v2g=True, soc_arrive=0.5)
    mb = ModelBuilder()
    blk = build_ev_block(mb, ev, "disp", H)
    obj = {int(i): 1.0 for i in blk.vars["p_ch"] if i >= 0}
    obj.update({int(i): 1.0 for i in blk.vars["p_dis"] if i >= 0})
    x = _solve(mb, obj)
    ch, dis = x[blk.vars["p_ch"][:10]], x[blk.vars["p_dis"][:10]]
    assert np.all(ch * dis <= 1e-6)


def test_ev_infeasible_request_rejected():
    with pytest.raises(DerError):
        EvEvent("car", "b1", 0, 2, e_req=20.0, p_max=7.0)
    with pytest.raises(DerError):
        EvEvent("car", "b1", 5, 5, e_req=1.0)


def _fleet(n_events=67):
    gens = (Generator("pv", "b1", 10.0, 11.0, _flat(0.8)),)
    hps = (HeatPump("hp", "b1", 5.0, 3.0, 2.0, 10.0, 20.0, 24.0, 21.0, _flat(5.0)),)
    events = tuple(EvEvent(f"ev{k}", "b1", 8, 17, 5.0) for k in range(n_events))
    from reserve_duration.ders import FixedLoad
    loads = (FixedLoad("l", "b1", _flat(2.0), _flat(0.5)),)
    return Fleet(gens, hps, (), events, loads)


def test_zero_disruption_keeps_all_events():
    fleet = _fleet()
    out = apply_scenario(fleet, ScenarioSample(ev_disruption=0.0, removal_seed=3))
    assert out.ev_events == fleet.ev_events


def test_clip_capacity_factor():
    out = apply_scenario(_fleet(), ScenarioSample(irr_error=-1.0))
    assert out.generators[0].cf_profile == tuple(_flat(0.0))
    out = apply_scenario(_fleet(), ScenarioSample(irr_error=0.5))
    assert max(out.generators[0].cf_profile) == 1.0


def test_disruption_removes_rounded_count():
    fleet = _fleet(67)
    out = apply_scenario(fleet, ScenarioSample(ev_disruption=0.20, removal_seed=11))
    assert round(0.2 * 67, 1) == 13.4
    assert len(out.ev_events) == 67 - 13
    again = apply_scenario(fleet, ScenarioSample(ev_disruption=0.20, removal_seed=11))
    assert again.ev_events == out.ev_events


def test_temperature_and_load_errors():
    out = apply_scenario(_fleet(), ScenarioSample(temp_error=-1.5, load_error=0.1))
    assert out.heat_pumps[0].ambient_profile[0] == pytest.approx(3.5)
    assert out.loads[0].p_profile[0] == pytest.approx(2.2)
    out = apply_scenario(_fleet(), ScenarioSample(load_error=-1.5))
    assert min(out.loads[0].p_profile) == 0.0


def test_ev_csv_import():
    text = "vehicle,bus,arrive,depart,e_req,soc_arrive,v2g\nA,b3,18,24,12.5,0.4,true\nB,b4,8,17,6,0.5,0\n"
    events = read_ev_events_csv(text)
    assert [e.vehicle for e in events] == ["A", "B"]
    assert events[0].v2g and not events[1].v2g
    assert events[0].e_cap == 70.0 and events[0].p_max == 7.0
    with pytest.raises(DerError, match="missing"):
        read_ev_events_csv("vehicle,bus\nA,b1\n")
