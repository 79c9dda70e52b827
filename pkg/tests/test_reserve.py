import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from reserve_duration.ders import Battery, FixedLoad, Fleet, ScenarioSample
from reserve_duration.grid import branched_feeder, chain_feeder
from reserve_duration.reserve import (OMEGA, ProductSpec, ReserveError, ReserveOptions, ReserveSession,
                                      SupplyProfileFamily, UncertaintySpace, Window, build_base_model,
                                      build_supply_family, enumerate_windows, latin_hypercube, lhs_sample,
                                      max_reserve, reliability_quantile, uniform)
from reserve_duration.synthetic import case_study_fleet, five_bus_fleet, five_bus_network

NO_LIMITS = ReserveOptions(parity=False, flow_limits=False, voltage_limits=False)


def _ideal_battery(bus="b1"):
    return Battery("bess", bus, e_cap=10.0, p_ch_max=5.0, p_dis_max=5.0, eta_ch=1.0, eta_dis=1.0,
                   soc_min=0.0, soc_max=1.0, soc_init=0.5)


def test_windows_tile_the_day():
    assert enumerate_windows(24) == [Window(0, 24)]
    assert [w.start for w in enumerate_windows(6)] == [0, 6, 12, 18]
    for d in OMEGA:
        hours = [h for w in enumerate_windows(d) for h in w.hours]
        assert hours == list(range(24))


@pytest.mark.parametrize("bad", [5, 7, 0, -1, 2.5])
def test_non_divisor_rejected(bad):
    with pytest.raises(ReserveError):
        enumerate_windows(bad)


def test_zero_fleet_gives_zero():
    q, status = max_reserve(chain_feeder(3), Fleet(), ProductSpec("upward", 1), Window(5, 1), options=NO_LIMITS)
    assert q == 0.0 and status == "optimal"


def test_single_battery_power_limited():
    fleet = Fleet(batteries=(_ideal_battery(),))
    q, _ = max_reserve(chain_feeder(2), fleet, ProductSpec("upward", 1), Window(0, 1), options=NO_LIMITS)
    assert q == pytest.approx(5.0, abs=1e-6)


def test_single_battery_cannot_hold_a_day():
    fleet = Fleet(batteries=(_ideal_battery(),))
    q, _ = max_reserve(chain_feeder(2), fleet, ProductSpec("upward", 24), Window(0, 24), options=NO_LIMITS)
    assert q == pytest.approx(0.0, abs=1e-6)


def test_lone_battery_with_parity_offers_nothing():
    # holding the schedule elsewhere leaves no energy to shift into the window
    fleet = Fleet(batteries=(_ideal_battery(),))
    opts = dataclasses.replace(NO_LIMITS, parity=True)
    q, _ = max_reserve(chain_feeder(2), fleet, ProductSpec("upward", 4), Window(8, 4), options=opts)
    assert q == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("duration", [1, 4])
def test_symmetric_battery_symmetric_reserve(duration):
    fleet = Fleet(batteries=(_ideal_battery(),))
    net = chain_feeder(2)
    for w in enumerate_windows(duration)[:3]:
        up, _ = max_reserve(net, fleet, ProductSpec("upward", duration), w, options=NO_LIMITS)
        down, _ = max_reserve(net, fleet, ProductSpec("downward", duration), w, options=NO_LIMITS)
        assert abs(up - down) <= 1e-6


def test_adding_a_device_never_hurts():
    full = five_bus_fleet(("summer",))["summer"]
    smaller = dataclasses.replace(full, batteries=())
    net = five_bus_network()
    for d, start in [(1, 3), (1, 12), (4, 8), (24, 0)]:
        product = ProductSpec("upward", d)
        q_small, _ = max_reserve(net, smaller, product, Window(start, d), options=NO_LIMITS)
        q_full, _ = max_reserve(net, full, product, Window(start, d), options=NO_LIMITS)
        assert q_full >= q_small - 1e-6


def test_backends_agree_on_small_case():
    fleet = Fleet(batteries=(_ideal_battery(),),
                  loads=(FixedLoad("l", "b1", [1.0] * 24, [0.2] * 24),))
    net = chain_feeder(2)
    results = {}
    for backend in ("highs", "highs-tree", "internal"):
        opts = dataclasses.replace(NO_LIMITS, backend=backend)
        results[backend] = [max_reserve(net, fleet, ProductSpec("downward", 2), w, options=opts)[0]
                            for w in enumerate_windows(2)[:4]]
    np.testing.assert_allclose(results["highs-tree"], results["highs"], atol=1e-6)
    np.testing.assert_allclose(results["internal"], results["highs"], atol=1e-6)


def test_limit_screening_does_not_change_results():
    fleet = five_bus_fleet(("summer",))["summer"]
    net = five_bus_network()
    on = ReserveOptions(parity=False)
    off = dataclasses.replace(on, screen_limits=False)
    for d, start in [(1, 12), (3, 9), (24, 0)]:
        product = ProductSpec("downward", d)
        a, _ = max_reserve(net, fleet, product, Window(start, d), options=on)
        b, _ = max_reserve(net, fleet, product, Window(start, d), options=off)
        assert a == pytest.approx(b, abs=1e-6)


def test_session_matches_single_solves():
    fleet = five_bus_fleet(("winter",))["winter"]
    net = five_bus_network()
    opts = ReserveOptions(parity=True)
    session = ReserveSession(build_base_model(net, fleet, ("up",), opts), opts)
    for w in enumerate_windows(6):
        q_session, _ = session.solve(w)
        q_single, _ = max_reserve(net, fleet, ProductSpec("upward", 6), w, options=opts)
        assert q_session == pytest.approx(q_single, abs=1e-6)


def test_unknown_backend_rejected():
    base = build_base_model(chain_feeder(2), Fleet(), ("up",))
    with pytest.raises(ReserveError):
        ReserveSession(base, ReserveOptions(backend="cplex"))


# --- sampling and quantiles ------------------------------------------------------

@pytest.mark.parametrize("n", [4, 100, 1000])
def test_lhs_one_sample_per_stratum(n):
    space = UncertaintySpace()
    samples = lhs_sample(space, n, seed=3)
    cols = {
        "irr_error": norm.cdf([s.irr_error for s in samples], 0, space.irr_sigma),
        "temp_error": norm.cdf([s.temp_error for s in samples], 0, space.temp_sigma),
        "load_error": norm.cdf([s.load_error for s in samples], 0, space.load_sigma),
        "ev_disruption": np.array([s.ev_disruption for s in samples]) / space.disruption_high,
    }
    for name, u in cols.items():
        counts = np.bincount(np.floor(u * n).astype(int), minlength=n)
        assert counts.tolist() == [1] * n, name


def test_lhs_quarters():
    u = latin_hypercube(4, [uniform(0.0, 1.0)], np.random.default_rng(0))[:, 0]
    assert sorted(np.floor(u * 4).astype(int).tolist()) == [0, 1, 2, 3]


def test_lhs_is_seeded():
    a = lhs_sample(UncertaintySpace(), 20, seed=5)
    b = lhs_sample(UncertaintySpace(), 20, seed=5)
    c = lhs_sample(UncertaintySpace(), 20, seed=6)
    assert a == b and a != c


def test_bad_distribution_rejected():
    with pytest.raises(ReserveError):
        uniform(1.0, 0.0)
    with pytest.raises(ReserveError):
        latin_hypercube(0, [uniform(0, 1)], np.random.default_rng(0))


def test_quantile_examples():
    assert reliability_quantile(range(1, 1001), 0.001) == 1
    assert reliability_quantile([10, 20, 30, 40], 0.5) == 20
    assert reliability_quantile([7.5] * 9, 0.3) == 7.5
    with pytest.raises(ReserveError):
        reliability_quantile([], 0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=80),
       st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_quantile_monotone_in_alpha(samples, a1, a2):
    lo, hi = sorted((a1, a2))
    assert reliability_quantile(samples, lo) <= reliability_quantile(samples, hi)


# --- supply family ----------------------------------------------------------------

def _small_family(**kw):
    args = dict(durations=(1, 24), directions=("upward", "downward"), n_samples=2, seed=11,
                options=ReserveOptions(backend="highs-tree", node_limit=1))
    args.update(kw)
    return build_supply_family(five_bus_network(), five_bus_fleet(), **args)


def test_family_cardinality_and_window_constancy():
    fam = _small_family()
    assert fam.values.shape == (2, 3, 24, 2)
    assert len(fam) == 2 * 24 * 3 * 2
    assert np.all(fam.values >= 0)
    # the whole-day product is one number per day and direction
    assert np.all(fam.values[1] == fam.values[1, :, :1, :])


def test_family_deterministic_and_job_independent():
    a = _small_family()
    b = _small_family(jobs=2)
    assert np.array_equal(a.values, b.values)
    assert a.to_csv() == b.to_csv()


def test_family_round_trip():
    fam = _small_family(durations=(24,), directions=("downward",))
    again = SupplyProfileFamily.from_dict(fam.to_dict())
    assert np.array_equal(again.values, fam.values) and again.seasons == fam.seasons


def test_deterministic_mode_matches_single_solves():
    zero = UncertaintySpace(0.0, 0.0, 0.0, 0.0, 0.0)
    assert zero.is_deterministic
    opts = ReserveOptions()
    fam = build_supply_family(five_bus_network(), five_bus_fleet(("summer",)), (4,), ("upward",), 1, 0, zero,
                              options=opts)
    fleet = five_bus_fleet(("summer",))["summer"]
    for w in enumerate_windows(4):
        q, _ = max_reserve(five_bus_network(), fleet, ProductSpec("upward", 4), w, ScenarioSample(), opts)
        assert fam.value(4, "summer", w.start, "upward") == pytest.approx(q, abs=1e-9)


def test_pv_heavy_fleet_supplies_more_by_day():
    net = branched_feeder(97)
    fleet = case_study_fleet(net, seasons=("summer",))["summer"]
    opts = ReserveOptions(backend="highs-tree", node_limit=1)
    session = ReserveSession(build_base_model(net, fleet, ("up",), opts), opts)
    noon, _ = session.solve(Window(12, 1))
    midnight, _ = session.solve(Window(0, 1))
    assert noon > midnight
