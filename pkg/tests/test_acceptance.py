"""Acceptance suite: one test per criterion; the run summary prints PASS/FAIL for each."""
import json
import os
import time

import numpy as np
import pytest

from reserve_duration.cli import main
from reserve_duration.ders import Battery, EvEvent, HeatPump, build_battery_block, build_ev_block, \
    build_heatpump_block
from reserve_duration.design import DesignRow, alignment_objective, availability_objective, dominates, \
    evaluate_design, pareto_front
from reserve_duration.grid import Bus, Line, Network, build_distflow_block
from reserve_duration.imbalance import HourlySeries, RepresentativeProfile, build_representative_profiles, \
    meteorological_season
from reserve_duration.milp import INFEASIBLE, OPTIMAL, ModelBuilder, from_dense, solve, solve_lp, solve_milp
from reserve_duration.reserve import OMEGA, ReserveOptions, SupplyProfileFamily, UncertaintySpace, \
    build_supply_family, enumerate_windows, latin_hypercube, lhs_sample, reliability_quantile, uniform
from reserve_duration.synthetic import five_bus_fleet, five_bus_network

from _oracles import (downstream_sums, exhaustive_milp, random_lp, random_milp, simulate_heat_pump,
                      vertex_enumeration)

criterion = pytest.mark.criterion


def _detail(request, text):
    request.node.criterion_detail = text


# 1 ------------------------------------------------------------------------------

@criterion(1, "LP/MILP solver matches vertex and binary enumeration")
def test_c1_solver_oracles(request):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        c, A, senses, b, lb, ub = random_lp(rng)
        expected = vertex_enumeration(c, A, senses, b, lb, ub)
        sol = solve_lp(from_dense(c, A, senses, b, lb, ub))
        if expected is None:
            assert sol.status == INFEASIBLE, seed
        else:
            assert sol.status == OPTIMAL, seed
            worst = max(worst, abs(sol.objective - expected))
    for seed in range(50):
        rng = np.random.default_rng(20_000 + seed)
        c, A, senses, b, lb, ub, binary = random_milp(rng, n_bin=int(rng.integers(1, 9)))
        expected = exhaustive_milp(c, A, senses, b, lb, ub, binary)
        sol = solve_milp(from_dense(c, A, senses, b, lb, ub, binary))
        worst = max(worst, abs(sol.objective - expected))
    elapsed = time.perf_counter() - t0
    _detail(request, f"250 problems, max error {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-6
    assert elapsed < 120


# 2 ------------------------------------------------------------------------------

def _fixed_injections(network, p, q):
    mb = ModelBuilder()
    block = build_distflow_block(mb, network, "disp", 1)
    for bus in network.buses:
        k = network.bus_index[bus.id]
        mb.fix(int(block.p_inj[k, 0]), p.get(bus.id, 0.0))
        mb.fix(int(block.q_inj[k, 0]), q.get(bus.id, 0.0))
    sol = solve(mb.build(), "highs")
    assert sol.status == OPTIMAL
    return block, sol.values


@criterion(2, "power-flow hand cases on 2 and 3 buses")
def test_c2_distflow_fixtures():
    two = Network((Bus("b0"), Bus("b1")), (Line("b0", "b1", 0.01, 0.02, 5.0),), "b0", base_kva=1.0)
    block, x = _fixed_injections(two, {"b1": -0.1}, {"b1": -0.05})
    assert abs(x[block.P[1, 0]] - 0.1) <= 1e-9 and abs(x[block.Q[1, 0]] - 0.05) <= 1e-9
    assert abs(x[block.v[1, 0]] - 0.996) <= 1e-9

    three = Network((Bus("b0"), Bus("b1"), Bus("b2")),
                    (Line("b0", "b1", 0.02, 0.01, 5.0), Line("b1", "b2", 0.03, 0.015, 5.0)), "b0", base_kva=1.0)
    p, q = {"b1": -0.2, "b2": -0.15}, {"b1": -0.05, "b2": -0.02}
    block, x = _fixed_injections(three, p, q)
    parents = {"b1": "b0", "b2": "b1"}
    P, Q = downstream_sums(parents, p), downstream_sums(parents, q)
    v1 = 1 - 2 * (0.02 * P["b1"] + 0.01 * Q["b1"])
    v2 = v1 - 2 * (0.03 * P["b2"] + 0.015 * Q["b2"])
    for bus, v_ref in (("b1", v1), ("b2", v2)):
        k = three.bus_index[bus]
        assert abs(x[block.P[k, 0]] - P[bus]) <= 1e-9
        assert abs(x[block.Q[k, 0]] - Q[bus]) <= 1e-9
        assert abs(x[block.v[k, 0]] - v_ref) <= 1e-9


# 3 ------------------------------------------------------------------------------

def _optimise(mb, objective):
    mb.set_objective(objective)
    sol = solve(mb.build(), "highs")
    assert sol.status == OPTIMAL
    return sol.values


@criterion(3, "device blocks: heat pump, battery round trip, EV without V2G")
def test_c3_device_oracles():
    amb = list(2 + 6 * np.sin(np.linspace(0, 2 * np.pi, 24)))
    hp = HeatPump("hp", "b1", 6.0, 3.2, 2.0, 10.0, 20.0, 24.0, 21.0, amb)
    mb = ModelBuilder()
    blk = build_heatpump_block(mb, hp, "disp", 24)
    x = _optimise(mb, {int(i): float(t) for t, i in enumerate(blk.vars["p"])})
    temps = simulate_heat_pump(21.0, amb, x[blk.vars["p"]], 2.0, 10.0, 3.2)
    assert np.max(np.abs(temps - x[blk.vars["T"]])) <= 1e-9

    bess = Battery("bess", "b1", e_cap=75.0, p_ch_max=10.0, p_dis_max=10.0, eta_ch=0.95, eta_dis=0.95,
                   soc_min=0.1, soc_max=0.9, soc_init=0.5)
    mb = ModelBuilder()
    blk = build_battery_block(mb, bess, "disp", 24)
    obj = {}
    for t in range(24):
        obj[int(blk.vars["p_ch"][t])] = 1.0 if t < 12 else -2.0
        obj[int(blk.vars["p_dis"][t])] = 2.0 if t >= 12 else -1.0
    x = _optimise(mb, obj)
    charged, discharged = x[blk.vars["p_ch"]].sum(), x[blk.vars["p_dis"]].sum()
    assert charged > 1.0
    assert abs(x[blk.vars["soc"]][-1] - x[blk.vars["soc"]][0]) <= 1e-6
    assert abs(discharged - 0.9025 * charged) <= 1e-6

    ev = EvEvent("car", "b1", 8, 17, e_req=10.0)
    mb = ModelBuilder()
    blk = build_ev_block(mb, ev, "disp", 24)
    assert "p_dis" not in blk.vars
    x = _optimise(mb, {int(i): 1.0 for i in blk.vars["p_ch"] if i >= 0})
    assert np.all(blk.injection_value(x) <= 0.0)


# 4 ------------------------------------------------------------------------------

@criterion(4, "window nesting and availability falling with duration (5 buses, parity off)")
def test_c4_window_nesting(request):
    t0 = time.perf_counter()
    fam = build_supply_family(five_bus_network(), five_bus_fleet(), OMEGA, ("upward", "downward"), n_samples=1,
                              seed=0, options=ReserveOptions(parity=False, backend="highs"))
    elapsed = time.perf_counter() - t0
    checked, worst = 0, -np.inf
    for t1 in OMEGA:
        for t2 in OMEGA:
            if t2 % t1:
                continue
            for direction in fam.directions:
                short, long_ = fam.profile(t1, direction), fam.profile(t2, direction)
                for w in enumerate_windows(t2):
                    inner = [short[:, v.start] for v in enumerate_windows(t1) if v.start in w.hours]
                    excess = long_[:, w.start] - np.min(inner, axis=0)
                    worst = max(worst, float(excess.max()))
                    checked += 1
    avail = {d: [availability_objective(fam, t, d) for t in OMEGA] for d in fam.directions}
    _detail(request, f"{checked} nested pairs, worst excess {worst:.1e} kW, {elapsed:.0f} s; "
                     f"availability up {np.round(avail['upward'], 2).tolist()}")
    assert worst <= 1e-6
    for values in avail.values():
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))
    assert elapsed < 600


# 5 ------------------------------------------------------------------------------

@criterion(5, "conservative reliability quantile and its monotonicity")
def test_c5_reliability_quantile(request):
    rng = np.random.default_rng(0)
    samples = latin_hypercube(1000, [uniform(0.0, 10.0)], rng)[:, 0]
    q = reliability_quantile(samples, 0.1)
    _detail(request, f"q_0.1 = {q:.4f}")
    assert 0.6 <= q <= 1.4
    alphas = np.linspace(0.001, 0.999, 101)
    for seed in range(50):
        data = np.random.default_rng(seed).uniform(0, 10, int(np.random.default_rng(seed).integers(1, 300)))
        qs = [reliability_quantile(data, a) for a in alphas]
        assert all(a <= b for a, b in zip(qs, qs[1:]))


# 6 ------------------------------------------------------------------------------

@criterion(6, "Latin hypercube: one sample per stratum in every marginal")
def test_c6_lhs_strata():
    from scipy.stats import norm
    space = UncertaintySpace()
    for n in (4, 100, 1000):
        u = latin_hypercube(n, [uniform(0, 1)] * 5, np.random.default_rng(n))
        for j in range(u.shape[1]):
            assert np.bincount(np.floor(u[:, j] * n).astype(int), minlength=n).tolist() == [1] * n
        samples = lhs_sample(space, n, seed=1)
        cols = (norm.cdf([s.irr_error for s in samples], 0, space.irr_sigma),
                norm.cdf([s.temp_error for s in samples], 0, space.temp_sigma),
                norm.cdf([s.load_error for s in samples], 0, space.load_sigma),
                np.array([s.ev_disruption for s in samples]) / space.disruption_high)
        for col in cols:
            assert np.bincount(np.floor(col * n).astype(int), minlength=n).tolist() == [1] * n


# 7 ------------------------------------------------------------------------------

def _hourly(func, year=2024, rng=None):
    start = np.datetime64(f"{year}-01-01T00")
    n_days = 366 if year % 4 == 0 else 365
    stamps = [(start + np.timedelta64(k, "h")).astype(object) for k in range(24 * n_days)]
    out = {}
    for d in ("upward", "downward"):
        vals = np.array([func(meteorological_season(t.date()), t.hour, d) for t in stamps], dtype=float)
        if rng is not None:
            vals = vals + rng.uniform(0, 20, vals.size)
        out[d] = HourlySeries(d, tuple(stamps), vals)
    return out


@criterion(7, "seasonal profile averaging: planted pattern, linearity, order independence")
def test_c7_profile_pipeline():
    def f(s, h, d):
        return (1 + ("winter", "spring", "summer", "autumn").index(s)) * 3.7 + h * 0.11 + (d == "upward")
    prof = build_representative_profiles(_hourly(f))
    expected = np.array([[[f(s, h, d) for d in prof.directions] for h in range(24)] for s in prof.seasons])
    assert np.max(np.abs(prof.values - expected)) <= 1e-12

    rng = np.random.default_rng(5)
    noisy = _hourly(lambda s, h, d: 0.0, rng=rng)
    base = build_representative_profiles(noisy)
    for k in (0.0, 0.5, 3.0):
        scaled = {d: HourlySeries(d, s.hours, k * s.values) for d, s in noisy.items()}
        assert np.max(np.abs(build_representative_profiles(scaled).values - k * base.values)) <= 1e-12
    other = _hourly(lambda s, h, d: 0.0, rng=rng)
    summed = {d: HourlySeries(d, s.hours, s.values + other[d].values) for d, s in noisy.items()}
    both = build_representative_profiles(summed).values
    assert np.max(np.abs(both - base.values - build_representative_profiles(other).values)) <= 1e-12
    perm = rng.permutation(len(noisy["upward"].hours))
    shuffled = {d: HourlySeries(d, tuple(s.hours[i] for i in perm), s.values[perm]) for d, s in noisy.items()}
    assert np.max(np.abs(build_representative_profiles(shuffled).values - base.values)) <= 1e-12


# 8 ------------------------------------------------------------------------------

@criterion(8, "objective invariances, perfect fit and Pareto flags vs brute force")
def test_c8_objectives():
    rng = np.random.default_rng(8)
    seasons = ("winter", "spring_autumn", "summer")
    fam = SupplyProfileFamily(OMEGA, seasons, ("upward", "downward"),
                              rng.uniform(0, 100, (len(OMEGA), 3, 24, 2)), 1, 0)
    demand = RepresentativeProfile(("winter", "spring", "summer", "autumn"), ("upward", "downward"),
                                   rng.uniform(0, 5, (4, 24, 2)), (2024,))
    base = evaluate_design(fam, demand)
    for k in (0.5, 2.0, 10.0):
        scaled = evaluate_design(fam.scaled(k), demand)
        for r0, r1 in zip(base.rows, scaled.rows):
            assert abs(r1.alignment - r0.alignment) <= 1e-12
            assert abs(r1.availability_kw - k * r0.availability_kw) <= 1e-12 * max(1.0, k * r0.availability_kw)

    shape = rng.uniform(0, 1, (3, 24, 1))
    same = SupplyProfileFamily((1,), seasons, ("upward",), 8.0 * shape[None], 1, 0)
    dem = RepresentativeProfile(seasons, ("upward",), 2.0 * shape, (2024,))
    assert alignment_objective(same, 1, "upward", dem) == 0.0

    for trial in range(200):
        r = np.random.default_rng(trial)
        rows = [DesignRow(t, "upward", float(r.integers(0, 5)), -float(r.integers(0, 5)) / 4) for t in OMEGA]
        pareto_front(rows)
        for a in rows:
            dominated = any(dominates(b, a) for b in rows if b is not a)
            assert a.pareto == (not dominated)


# 9 ------------------------------------------------------------------------------

@criterion(9, "97-bus case study, full duration set, both directions, N=100")
def test_c9_case_study_scale(request, tmp_path):
    jobs = os.cpu_count() or 1
    t0 = time.perf_counter()
    rc = main(["supply", "--samples", "100", "--jobs", str(jobs), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    assert rc == 0
    fam = SupplyProfileFamily.from_dict(json.loads((tmp_path / "supply_family.json").read_text()))
    summer = fam.profile(1, "upward")[fam.seasons.index("summer")]
    day, night = float(summer[9:17].mean()), float(np.r_[summer[:6], summer[21:]].mean())
    _detail(request, f"{elapsed / 60:.1f} min on {jobs} core(s); summer 1 h upward day {day:.1f} kW "
                     f"vs night {night:.1f} kW")
    assert day > night
    assert elapsed < 3600


# 10 -----------------------------------------------------------------------------

FAST = """
[network]
source = "five-bus"
[fleet]
source = "five-bus"
[uncertainty]
samples = 3
"""


@criterion(10, "run-all is byte-identical across repeats and --jobs values")
def test_c10_determinism(request, tmp_path):
    cfg = tmp_path / "fast.toml"
    cfg.write_text(FAST)
    outs = []
    for k, jobs in enumerate((1, 1, 3)):
        out = tmp_path / f"run{k}"
        assert main(["run-all", "--config", str(cfg), "--seed", "4", "--jobs", str(jobs), "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir() if p.suffix in (".csv", ".json"))
    assert len(names) == 9
    for name in names:
        ref = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == ref for o in outs[1:]), name
    _detail(request, f"{len(names)} files compared over 3 runs")
