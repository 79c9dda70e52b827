"""Synthetic fixtures: the case-study feeder and fleet, a small test fixture,
and a quarter-hourly activation data set with the usual defects.

Everything here is generated from a seed; nothing is real measurement data.
"""
from __future__ import annotations

import io
import math
from datetime import datetime, timedelta

import numpy as np

from .ders import Battery, EvEvent, FixedLoad, Fleet, Generator, HeatPump
from .grid import Bus, Line, Network, branched_feeder

LATITUDE = 47.5
# central calendar day of each meteorological season (day of year)
SEASON_DAYS = {"winter": 15, "spring": 105, "summer": 196, "autumn": 288}
REPRESENTATIVE_DAYS = ("winter", "spring_autumn", "summer")
CLEARNESS = {"winter": 0.45, "spring": 0.62, "summer": 0.78, "autumn": 0.55}
AMBIENT = {"winter": (1.0, 4.0), "spring": (10.0, 5.0), "summer": (17.0, 5.0), "autumn": (10.0, 4.5)}
LOAD_LEVEL = {"winter": 1.0, "spring": 0.85, "summer": 0.75, "autumn": 0.88}

# residential demand shape, peak 1.0 in the winter evening
_LOAD_SHAPE = np.array([0.42, 0.36, 0.33, 0.32, 0.33, 0.40, 0.58, 0.74, 0.70, 0.62, 0.60, 0.63,
                        0.66, 0.61, 0.57, 0.58, 0.66, 0.82, 0.97, 1.00, 0.93, 0.80, 0.64, 0.50])


def capacity_factor(day_of_year: int, clearness: float = 0.7, latitude: float = LATITUDE) -> np.ndarray:
    """Hourly PV capacity factor from the solar elevation at each hour's midpoint (solar time)."""
    decl = math.radians(23.44) * math.sin(2 * math.pi * (284 + day_of_year) / 365.0)
    lat = math.radians(latitude)
    hours = np.arange(24) + 0.5
    omega = np.radians(15.0 * (hours - 12.0))
    cos_z = math.sin(lat) * math.sin(decl) + math.cos(lat) * math.cos(decl) * np.cos(omega)
    return np.clip(clearness * cos_z, 0.0, 1.0)


def ambient_profile(mean: float, amplitude: float) -> np.ndarray:
    # coldest around 05:00, warmest around 15:00
    hours = np.arange(24)
    return mean - amplitude * np.cos(2 * math.pi * (hours - 15) / 24.0 + math.pi)


def _season_inputs(season: str) -> tuple[np.ndarray, np.ndarray, float]:
    if season == "spring_autumn":
        a = _season_inputs("spring")
        b = _season_inputs("autumn")
        return (a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2
    cf = capacity_factor(SEASON_DAYS[season], CLEARNESS[season])
    return cf, ambient_profile(*AMBIENT[season]), LOAD_LEVEL[season]


def _ev_events(rng: np.random.Generator, buses: list[str], n_vehicles: int, v2g_share: float,
               e_cap: float, p_max: float) -> list[EvEvent]:
    events = []
    n_v2g = int(round(v2g_share * n_vehicles))
    v2g_ids = set(rng.choice(n_vehicles, size=n_v2g, replace=False).tolist()) if n_v2g else set()
    for k in range(n_vehicles):
        kind = k % 3
        if kind == 0:  # workplace
            arrive = int(rng.integers(7, 10))
            depart = int(rng.integers(16, 19))
        elif kind == 1:  # evening at home
            arrive = int(rng.integers(17, 21))
            depart = 24
        else:  # overnight remainder
            arrive = 0
            depart = int(rng.integers(6, 9))
        soc = float(np.round(rng.uniform(0.3, 0.6), 3))
        cap = min(0.85 * p_max * 0.95 * (depart - arrive), (0.95 - soc) * e_cap)
        e_req = float(np.round(min(rng.uniform(5.0, 20.0), cap), 3))
        events.append(EvEvent(f"ev{k:02d}", buses[k % len(buses)], arrive, depart, e_req,
                              e_cap=e_cap, p_max=p_max, v2g=k in v2g_ids, soc_arrive=soc))
    return events


def case_study_fleet(network: Network | None = None, seed: int = 0, pv_kwp: float = 150.0,
                     hp_kw: float = 85.0, bess_kwh: float = 75.0, n_evs: int = 67, ev_kwh: float = 70.0,
                     ev_kw: float = 7.0, v2g_share: float = 0.25, load_peak_kw: float = 150.0,
                     seasons=REPRESENTATIVE_DAYS) -> dict[str, Fleet]:
    """DER portfolio spread over the buses of ``network``, one :class:`Fleet` per representative day."""
    network = network if network is not None else branched_feeder(97)
    rng = np.random.default_rng(seed)
    buses = [b.id for b in network.buses if b.id != network.root]
    order = [buses[i] for i in rng.permutation(len(buses))]

    n_pv, n_hp, n_bess = 20, 10, 3
    pv_buses = order[:n_pv]
    hp_buses = order[n_pv:n_pv + n_hp]
    bess_buses = order[n_pv + n_hp:n_pv + n_hp + n_bess]
    ev_buses = sorted(order[: max(1, len(order) * 2 // 3)], key=buses.index)
    load_buses = buses

    events = _ev_events(rng, ev_buses, n_evs, v2g_share, ev_kwh, ev_kw)
    pv_split = np.full(n_pv, pv_kwp / n_pv)
    bess = [Battery(f"bess{k}", bus, e_cap=bess_kwh / n_bess, p_ch_max=bess_kwh / n_bess / 2,
                    p_dis_max=bess_kwh / n_bess / 2) for k, bus in enumerate(bess_buses)]
    weights = rng.uniform(0.5, 1.5, len(load_buses))
    weights /= weights.sum()
    pf_tan = math.tan(math.acos(0.95))

    out = {}
    for season in seasons:
        cf, amb, level = _season_inputs(season)
        gens = [Generator(f"pv{k}", bus, float(p), float(round(1.1 * p, 6)), cf)
                for k, (bus, p) in enumerate(zip(pv_buses, pv_split))]
        hps = [HeatPump(f"hp{k}", bus, p_max=hp_kw / n_hp, cop=3.0, r_th=2.0, c_th=10.0, t_min=20.0,
                        t_max=24.0, t_init=22.0, ambient_profile=amb) for k, bus in enumerate(hp_buses)]
        load_p = load_peak_kw * level * _LOAD_SHAPE
        loads = [FixedLoad(f"load.{bus}", bus, load_p * w, load_p * w * pf_tan)
                 for bus, w in zip(load_buses, weights)]
        out[season] = Fleet(tuple(gens), tuple(hps), tuple(bess), tuple(events), tuple(loads))
    return out


def five_bus_network() -> Network:
    buses = tuple(Bus(f"b{k}") for k in range(5))
    lines = (Line("b0", "b1", 0.01, 0.008, 2.0), Line("b1", "b2", 0.015, 0.01, 1.5),
             Line("b1", "b3", 0.015, 0.01, 1.5), Line("b3", "b4", 0.02, 0.012, 1.0))
    return Network(buses, lines, "b0", base_kva=50.0)


def five_bus_fleet(seasons=REPRESENTATIVE_DAYS) -> dict[str, Fleet]:
    """One PV unit, one battery, one EV and one heat pump on the five-bus feeder."""
    out = {}
    for season in seasons:
        cf, amb, level = _season_inputs(season)
        out[season] = Fleet(
            (Generator("pv", "b2", 10.0, 11.0, cf),),
            (HeatPump("hp", "b4", p_max=4.0, cop=3.0, r_th=2.0, c_th=10.0, t_min=20.0, t_max=24.0,
                      t_init=22.0, ambient_profile=amb),),
            (Battery("bess", "b3", e_cap=10.0, p_ch_max=5.0, p_dis_max=5.0),),
            (EvEvent("car", "b4", 8, 17, 14.0, v2g=True, soc_arrive=0.4),),
            (FixedLoad("load", "b2", 4.0 * level * _LOAD_SHAPE, 1.3 * level * _LOAD_SHAPE),),
        )
    return out


def _activation_shape(season: str, direction: str) -> np.ndarray:
    """Mean activation in MW by hour: upward peaks morning, evening and night; downward by day."""
    h = np.arange(24)
    bump = lambda c, w: np.exp(-0.5 * ((h - c) / w) ** 2)
    if direction == "upward":
        base = 20 + 35 * bump(7, 1.5) + 40 * bump(19, 2.0) + 25 * bump(1, 2.0) + 25 * bump(25, 2.0)
    else:
        base = 15 + 45 * bump(12.5, 3.0)
    scale = {"winter": 1.2, "spring": 1.0, "summer": 0.85, "autumn": 1.0}[season]
    return scale * base


def month_season(month: int) -> str:
    return {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
            6: "summer", 7: "summer", 8: "summer"}.get(month, "autumn")


def activation_series(year: int = 2024, seed: int = 0, noise: float = 0.25, outlier_rate: float = 2e-4,
                      gap_rate: float = 1e-3) -> dict[str, tuple[list[datetime], np.ndarray]]:
    """Quarter-hourly activated energy (MWh) per direction with noise, spikes and missing runs (NaN)."""
    rng = np.random.default_rng(seed)
    start = datetime(year, 1, 1)
    n = (datetime(year + 1, 1, 1) - start).days * 96
    stamps = [start + timedelta(minutes=15 * k) for k in range(n)]
    hours = np.array([s.hour for s in stamps])
    seasons = [month_season(s.month) for s in stamps]
    out = {}
    for direction in ("upward", "downward"):
        shapes = {s: _activation_shape(s, direction) for s in SEASON_DAYS}
        mean_mw = np.array([shapes[s][h] for s, h in zip(seasons, hours)])
        mwh = mean_mw / 4.0 * rng.lognormal(0.0, noise, n) * np.exp(-noise ** 2 / 2)
        spikes = rng.random(n) < outlier_rate
        mwh[spikes] *= rng.uniform(15, 40, spikes.sum())
        starts = np.flatnonzero(rng.random(n) < gap_rate)
        for s0 in starts:
            mwh[s0:s0 + int(rng.integers(1, 20))] = np.nan
        out[direction] = (stamps, np.round(mwh, 4))
    return out


def activation_csv(year: int = 2024, seed: int = 0, **kw) -> str:
    """CSV text with columns ``timestamp,direction,value`` and ``N/A`` for missing cells."""
    buf = io.StringIO()
    buf.write("timestamp,direction,value\n")
    for direction, (stamps, values) in activation_series(year, seed, **kw).items():
        for s, v in zip(stamps, values):
            cell = "N/A" if np.isnan(v) else f"{v:.4f}"
            buf.write(f"{s.isoformat(timespec='minutes')},{direction},{cell}\n")
    return buf.getvalue()


__all__ = ["REPRESENTATIVE_DAYS", "SEASON_DAYS", "activation_csv", "activation_series", "ambient_profile",
           "capacity_factor", "case_study_fleet", "five_bus_fleet", "five_bus_network", "month_season"]
