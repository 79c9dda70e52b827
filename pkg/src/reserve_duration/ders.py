"""Distributed energy resources: device parameters, scenario realisation and
the per-device constraint blocks.

All powers are kW, energies kWh, temperatures degrees Celsius, time steps
hours. Profiles are sequences with one entry per step of the horizon.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
import numpy as np

from .grid import add_octagon
from .milp import EQ, GE, LE, ModelBuilder


class DerError(ValueError):
    pass


def _profile(values, name: str) -> tuple[float, ...]:
    arr = tuple(float(v) for v in values)
    if not arr:
        raise DerError(f"{name}: empty profile")
    return arr


@dataclass(frozen=True)
class Generator:
    name: str
    bus: str
    p_nom: float
    s_rating: float
    cf_profile: tuple[float, ...]
    ramp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "cf_profile", _profile(self.cf_profile, self.name))
        if any(not 0.0 <= c <= 1.0 for c in self.cf_profile):
            raise DerError(f"generator {self.name}: capacity factors must lie in [0, 1]")
        if self.p_nom < 0 or self.s_rating < self.p_nom:
            raise DerError(f"generator {self.name}: need 0 <= p_nom <= s_rating")

    @property
    def power_range(self) -> float:
        return self.p_nom


@dataclass(frozen=True)
class HeatPump:
    name: str
    bus: str
    p_max: float
    cop: float
    r_th: float
    c_th: float
    t_min: float
    t_max: float
    t_init: float
    ambient_profile: tuple[float, ...]
    ramp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ambient_profile", _profile(self.ambient_profile, self.name))
        if not self.t_min < self.t_max:
            raise DerError(f"heat pump {self.name}: need t_min < t_max")
        if self.c_th <= 0 or self.r_th <= 0 or self.cop <= 0 or self.p_max < 0:
            raise DerError(f"heat pump {self.name}: c_th, r_th, cop must be positive")
        if not self.t_min <= self.t_init <= self.t_max:
            raise DerError(f"heat pump {self.name}: t_init outside the comfort band")

    @property
    def power_range(self) -> float:
        return self.p_max


@dataclass(frozen=True)
class Battery:
    name: str
    bus: str
    e_cap: float
    p_ch_max: float
    p_dis_max: float
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    soc_min: float = 0.1
    soc_max: float = 0.9
    soc_init: float = 0.5
    s_rating: float | None = None
    ramp: float | None = None

    def __post_init__(self):
        if self.s_rating is None:
            object.__setattr__(self, "s_rating", max(self.p_ch_max, self.p_dis_max))
        if self.e_cap <= 0 or self.p_ch_max < 0 or self.p_dis_max < 0:
            raise DerError(f"battery {self.name}: need e_cap > 0 and non-negative power limits")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dis <= 1):
            raise DerError(f"battery {self.name}: efficiencies must lie in (0, 1]")
        if not 0 <= self.soc_min <= self.soc_init <= self.soc_max <= 1:
            raise DerError(f"battery {self.name}: need 0 <= soc_min <= soc_init <= soc_max <= 1")

    @property
    def power_range(self) -> float:
        return self.p_ch_max + self.p_dis_max

    @property
    def p_max(self) -> float:
        return max(self.p_ch_max, self.p_dis_max)


@dataclass(frozen=True)
class EvEvent:
    vehicle: str
    bus: str
    t_arrive: int
    t_depart: int
    e_req: float
    e_cap: float = 70.0
    p_max: float = 7.0
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    v2g: bool = False
    r_min: float = 0.0
    soc_arrive: float = 0.3
    ramp: float | None = None

    def __post_init__(self):
        if not 0 <= self.t_arrive < self.t_depart:
            raise DerError(f"EV {self.vehicle}: need 0 <= t_arrive < t_depart")
        if not 0 <= self.soc_arrive <= 1:
            raise DerError(f"EV {self.vehicle}: soc_arrive outside [0, 1]")
        if self.e_req < 0 or self.soc_arrive * self.e_cap + self.e_req > self.e_cap + 1e-9:
            raise DerError(f"EV {self.vehicle}: requested energy exceeds the battery capacity")
        hours = self.t_depart - self.t_arrive
        if self.e_req > self.p_max * self.eta_ch * hours + 1e-9:
            raise DerError(f"EV {self.vehicle}: e_req cannot be delivered within the stay")
        if self.r_min > self.p_max * self.eta_ch + 1e-9:
            raise DerError(f"EV {self.vehicle}: r_min exceeds the achievable charge rate")

    @property
    def power_range(self) -> float:
        return 2 * self.p_max if self.v2g else self.p_max


@dataclass(frozen=True)
class FixedLoad:
    name: str
    bus: str
    p_profile: tuple[float, ...]
    q_profile: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p_profile", _profile(self.p_profile, self.name))
        object.__setattr__(self, "q_profile", _profile(self.q_profile, self.name))
        if len(self.p_profile) != len(self.q_profile):
            raise DerError(f"load {self.name}: p and q profiles differ in length")


@dataclass(frozen=True)
class Fleet:
    generators: tuple[Generator, ...] = ()
    heat_pumps: tuple[HeatPump, ...] = ()
    batteries: tuple[Battery, ...] = ()
    ev_events: tuple[EvEvent, ...] = ()
    loads: tuple[FixedLoad, ...] = ()

    def __post_init__(self):
        for name in ("generators", "heat_pumps", "batteries", "ev_events", "loads"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def devices(self) -> list:
        return [*self.generators, *self.heat_pumps, *self.batteries, *self.ev_events]

    def check_horizon(self, horizon: int) -> None:
        for g in self.generators:
            if len(g.cf_profile) < horizon:
                raise DerError(f"generator {g.name}: profile shorter than horizon {horizon}")
        for h in self.heat_pumps:
            if len(h.ambient_profile) < horizon:
                raise DerError(f"heat pump {h.name}: profile shorter than horizon {horizon}")
        for ld in self.loads:
            if len(ld.p_profile) < horizon:
                raise DerError(f"load {ld.name}: profile shorter than horizon {horizon}")
        for ev in self.ev_events:
            if ev.t_depart > horizon:
                raise DerError(f"EV {ev.vehicle}: departs after the horizon end")


@dataclass(frozen=True)
class ScenarioSample:
    irr_error: float = 0.0
    temp_error: float = 0.0
    load_error: float = 0.0
    ev_disruption: float = 0.0
    removal_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ev_disruption <= 1.0:
            raise DerError("ev_disruption must lie in [0, 1]")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def apply_scenario(fleet: Fleet, sample: ScenarioSample) -> Fleet:
    """Realise one draw of the forecast errors on a fleet."""
    gens = tuple(replace(g, cf_profile=tuple(np.clip(np.asarray(g.cf_profile) * (1 + sample.irr_error), 0, 1)))
                 for g in fleet.generators)
    hps = tuple(replace(h, ambient_profile=tuple(np.asarray(h.ambient_profile) + sample.temp_error))
                for h in fleet.heat_pumps)
    scale = 1 + sample.load_error
    loads = tuple(replace(ld, p_profile=tuple(np.maximum(np.asarray(ld.p_profile) * scale, 0.0)),
                          q_profile=tuple(np.asarray(ld.q_profile) * max(scale, 0.0)))
                  for ld in fleet.loads)
    events = fleet.ev_events
    n_remove = round_half_up(sample.ev_disruption * len(events))
    if n_remove:
        rng = np.random.default_rng(sample.removal_seed)
        removed = set(rng.choice(len(events), size=n_remove, replace=False).tolist())
        events = tuple(ev for k, ev in enumerate(events) if k not in removed)
    return Fleet(gens, hps, fleet.batteries, events, loads)


@dataclass
class DeviceBlock:
    """Handle to the variables one device contributes to a state.

    ``injection`` lists ``(indices over time, coefficient)`` pairs whose sum is
    the device's active power injected into its bus; ``-1`` marks steps with
    no variable. ``q`` is ``None`` for devices without reactive capability.
    ``ramp`` is in kW/min; ``swing`` bounds how far the injection can move
    between any two operating points, so ramp limits above it are void.
    """

    name: str
    bus: str
    kind: str
    injection: list[tuple[np.ndarray, float]]
    q: np.ndarray | None
    ramp: float
    swing: float
    vars: dict[str, np.ndarray] = field(default_factory=dict)

    def injection_expr(self, t: int) -> dict[int, float]:
        expr: dict[int, float] = {}
        for idx, coef in self.injection:
            if idx[t] >= 0:
                expr[int(idx[t])] = expr.get(int(idx[t]), 0.0) + coef
        return expr

    def injection_value(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.injection[0][0]))
        for idx, coef in self.injection:
            mask = idx >= 0
            out[mask] += coef * values[idx[mask]]
        return out


def _ramp(device, default_minutes: float = 5.0) -> float:
    # default: full rated power p_max reachable within five minutes
    if device.ramp is not None:
        return device.ramp
    rated = device.p_nom if isinstance(device, Generator) else device.p_max
    return rated / default_minutes


def build_generator_block(mb: ModelBuilder, gen: Generator, state: str, horizon: int,
                          reactive: bool = True) -> DeviceBlock:
    ub = gen.p_nom * np.asarray(gen.cf_profile[:horizon])
    p = mb.add_vars(f"{state}.{gen.name}.p", horizon, 0.0, ub)
    q = None
    if reactive:
        q = mb.add_vars(f"{state}.{gen.name}.q", horizon, -gen.s_rating, gen.s_rating)
        for t in range(horizon):
            add_octagon(mb, p[t], q[t], gen.s_rating, f"{state}.{gen.name}.s.{t}")
    # without q the polygon reduces to p <= s_rating, implied by p_nom <= s_rating
    return DeviceBlock(gen.name, gen.bus, "generator", [(p, 1.0)], q, _ramp(gen), gen.power_range, {"p": p})


def build_heatpump_block(mb: ModelBuilder, hp: HeatPump, state: str, horizon: int,
                         dt: float = 1.0) -> DeviceBlock:
    p = mb.add_vars(f"{state}.{hp.name}.p", horizon, 0.0, hp.p_max)
    temp = mb.add_vars(f"{state}.{hp.name}.T", horizon + 1, hp.t_min, hp.t_max)
    mb.fix(int(temp[0]), hp.t_init)
    a = dt / (hp.c_th * hp.r_th)
    for t in range(horizon):
        amb = hp.ambient_profile[t]
        mb.add_constraint({temp[t + 1]: 1.0, temp[t]: -(1.0 - a), p[t]: -dt * hp.cop / hp.c_th},
                          EQ, a * amb, f"{state}.{hp.name}.dyn.{t}")
    mb.add_constraint({temp[horizon]: 1.0, temp[0]: -1.0}, EQ, 0.0, f"{state}.{hp.name}.cyclic")
    return DeviceBlock(hp.name, hp.bus, "heat_pump", [(p, -1.0)], None, _ramp(hp), hp.power_range,
                       {"p": p, "T": temp})


def build_battery_block(mb: ModelBuilder, bess: Battery, state: str, horizon: int,
                        dt: float = 1.0, reactive: bool = True) -> DeviceBlock:
    n = bess.name
    p_ch = mb.add_vars(f"{state}.{n}.p_ch", horizon, 0.0, bess.p_ch_max)
    p_dis = mb.add_vars(f"{state}.{n}.p_dis", horizon, 0.0, bess.p_dis_max)
    soc = mb.add_vars(f"{state}.{n}.soc", horizon + 1, bess.soc_min, bess.soc_max)
    q = mb.add_vars(f"{state}.{n}.q", horizon, -bess.s_rating, bess.s_rating) if reactive else None
    mb.fix(int(soc[0]), bess.soc_init)
    exclusive = bess.p_ch_max > 0 and bess.p_dis_max > 0
    b = mb.add_vars(f"{state}.{n}.b", horizon, binary=True) if exclusive else None
    for t in range(horizon):
        mb.add_constraint({soc[t + 1]: 1.0, soc[t]: -1.0, p_ch[t]: -bess.eta_ch * dt / bess.e_cap,
                           p_dis[t]: dt / (bess.eta_dis * bess.e_cap)}, EQ, 0.0, f"{state}.{n}.dyn.{t}")
        if exclusive:
            mb.add_constraint({p_ch[t]: 1.0, b[t]: -bess.p_ch_max}, LE, 0.0, f"{state}.{n}.ch.{t}")
            mb.add_constraint({p_dis[t]: 1.0, b[t]: bess.p_dis_max}, LE, bess.p_dis_max, f"{state}.{n}.dis.{t}")
        if reactive:
            add_octagon(mb, {p_dis[t]: 1.0, p_ch[t]: -1.0}, q[t], bess.s_rating, f"{state}.{n}.s.{t}")
        else:
            if bess.p_dis_max > bess.s_rating:
                mb.add_constraint({p_dis[t]: 1.0, p_ch[t]: -1.0}, LE, bess.s_rating, f"{state}.{n}.s.{t}.0")
            if bess.p_ch_max > bess.s_rating:
                mb.add_constraint({p_dis[t]: 1.0, p_ch[t]: -1.0}, GE, -bess.s_rating, f"{state}.{n}.s.{t}.1")
    mb.add_constraint({soc[horizon]: 1.0, soc[0]: -1.0}, EQ, 0.0, f"{state}.{n}.cyclic")
    vars_ = {"p_ch": p_ch, "p_dis": p_dis, "soc": soc}
    if b is not None:
        vars_["b"] = b
    return DeviceBlock(n, bess.bus, "battery", [(p_dis, 1.0), (p_ch, -1.0)], q, _ramp(bess),
                       bess.power_range, vars_)


def build_ev_block(mb: ModelBuilder, ev: EvEvent, state: str, horizon: int, dt: float = 1.0) -> DeviceBlock:
    n = f"ev.{ev.vehicle}.{ev.t_arrive}"
    a, d = ev.t_arrive, min(ev.t_depart, horizon)
    steps = d - a
    p_ch_full = np.full(horizon, -1, dtype=int)
    p_dis_full = np.full(horizon, -1, dtype=int)
    p_ch = mb.add_vars(f"{state}.{n}.p_ch", steps, 0.0, ev.p_max, offset=a)
    p_ch_full[a:d] = p_ch
    energy = mb.add_vars(f"{state}.{n}.e", steps + 1, 0.0, ev.e_cap, offset=a)
    e0 = ev.soc_arrive * ev.e_cap
    mb.fix(int(energy[0]), e0)
    vars_ = {"p_ch": p_ch_full, "e": energy}
    if ev.v2g:
        p_dis = mb.add_vars(f"{state}.{n}.p_dis", steps, 0.0, ev.p_max, offset=a)
        b = mb.add_vars(f"{state}.{n}.b", steps, binary=True, offset=a)
        p_dis_full[a:d] = p_dis
        vars_["p_dis"] = p_dis_full
        vars_["b"] = b
    for k in range(steps):
        expr = {energy[k + 1]: 1.0, energy[k]: -1.0, p_ch[k]: -ev.eta_ch * dt}
        if ev.v2g:
            expr[p_dis[k]] = dt / ev.eta_dis
            mb.add_constraint({p_ch[k]: 1.0, b[k]: -ev.p_max}, LE, 0.0, f"{state}.{n}.ch.{a + k}")
            mb.add_constraint({p_dis[k]: 1.0, b[k]: ev.p_max}, LE, ev.p_max, f"{state}.{n}.dis.{a + k}")
        mb.add_constraint(expr, EQ, 0.0, f"{state}.{n}.dyn.{a + k}")
        if ev.r_min > 0:
            mb.add_constraint({energy[k + 1]: 1.0, energy[0]: -1.0}, GE, ev.r_min * (k + 1) * dt,
                              f"{state}.{n}.rate.{a + k + 1}")
    mb.add_constraint({energy[steps]: 1.0}, GE, e0 + ev.e_req, f"{state}.{n}.depart")
    injection = [(p_dis_full, 1.0), (p_ch_full, -1.0)] if ev.v2g else [(p_ch_full, -1.0)]
    return DeviceBlock(n, ev.bus, "ev", injection, None, _ramp(ev), ev.power_range, vars_)


def build_fleet_blocks(mb: ModelBuilder, fleet: Fleet, state: str, horizon: int,
                       reactive: bool = True) -> list[DeviceBlock]:
    """All device blocks of one state; ``reactive=False`` omits reactive-power variables."""
    fleet.check_horizon(horizon)
    blocks = [build_generator_block(mb, g, state, horizon, reactive) for g in fleet.generators]
    blocks += [build_heatpump_block(mb, h, state, horizon) for h in fleet.heat_pumps]
    blocks += [build_battery_block(mb, b, state, horizon, reactive=reactive) for b in fleet.batteries]
    blocks += [build_ev_block(mb, e, state, horizon) for e in fleet.ev_events]
    return blocks


def injection_bounds(device, horizon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step active injection range ``(p_lo, p_hi)`` and reactive magnitude bound ``q_abs``."""
    lo, hi, qa = np.zeros(horizon), np.zeros(horizon), np.zeros(horizon)
    if isinstance(device, Generator):
        hi[:] = device.p_nom * np.asarray(device.cf_profile[:horizon])
        qa[:] = device.s_rating
    elif isinstance(device, HeatPump):
        lo[:] = -device.p_max
    elif isinstance(device, Battery):
        lo[:] = -min(device.p_ch_max, device.s_rating)
        hi[:] = min(device.p_dis_max, device.s_rating)
        qa[:] = device.s_rating
    elif isinstance(device, EvEvent):
        a, d = device.t_arrive, min(device.t_depart, horizon)
        lo[a:d] = -device.p_max
        if device.v2g:
            hi[a:d] = device.p_max
    else:
        raise DerError(f"unknown device type {type(device).__name__}")
    return lo, hi, qa


# --- file formats -----------------------------------------------------------

EV_CSV_COLUMNS = ("vehicle", "bus", "arrive", "depart", "e_req", "soc_arrive")


def read_ev_events_csv(text: str, **defaults) -> list[EvEvent]:
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in EV_CSV_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise DerError(f"EV event CSV is missing columns {missing}")
    events = []
    for row in reader:
        extra = {k: _coerce(k, row[k]) for k in row if k not in EV_CSV_COLUMNS and row[k] not in (None, "")}
        events.append(EvEvent(row["vehicle"], row["bus"], int(row["arrive"]), int(row["depart"]),
                              float(row["e_req"]), soc_arrive=float(row["soc_arrive"]),
                              **{**defaults, **extra}))
    return events


def _coerce(key: str, value: str):
    if key == "v2g":
        return value.strip().lower() in ("1", "true", "yes")
    return float(value)


def _resolve(ref, profiles: dict, where: str) -> list[float]:
    if isinstance(ref, str):
        if ref not in profiles:
            raise DerError(f"{where}: unknown profile {ref!r}")
        return profiles[ref]
    return ref


def fleet_from_dict(data: dict, base_dir: Path | None = None) -> dict[str, Fleet]:
    """Parse a fleet file into one concrete :class:`Fleet` per representative day."""
    try:
        days = data["days"]
    except KeyError:
        raise DerError("fleet file needs a 'days' mapping of day name -> named profiles") from None
    events = [EvEvent(**e) for e in data.get("ev_events", [])]
    if "ev_events_csv" in data:
        path = Path(data["ev_events_csv"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        events += read_ev_events_csv(path.read_text())
    out = {}
    for day, profiles in days.items():
        try:
            gens = [Generator(**{**g, "cf_profile": _resolve(g["cf_profile"], profiles, g["name"])})
                    for g in data.get("generators", [])]
            hps = [HeatPump(**{**h, "ambient_profile": _resolve(h["ambient_profile"], profiles, h["name"])})
                   for h in data.get("heat_pumps", [])]
            bats = [Battery(**b) for b in data.get("batteries", [])]
            loads = []
            for ld in data.get("loads", []):
                p = np.asarray(_resolve(ld["p_profile"], profiles, ld["name"]), float) * ld.get("p_scale", 1.0)
                q = np.asarray(_resolve(ld["q_profile"], profiles, ld["name"]), float) * ld.get("q_scale", 1.0)
                loads.append(FixedLoad(ld["name"], ld["bus"], p, q))
        except TypeError as exc:
            raise DerError(f"fleet file: {exc}") from None
        out[day] = Fleet(gens, hps, bats, events, loads)
    return out


def fleet_to_dict(days: dict[str, Fleet]) -> dict:
    """Inverse of :func:`fleet_from_dict` (device lists taken from the first day)."""
    first = next(iter(days.values()))
    profiles = {}
    for day, fleet in days.items():
        prof = {}
        for g in fleet.generators:
            prof[f"{g.name}.cf"] = list(g.cf_profile)
        for h in fleet.heat_pumps:
            prof[f"{h.name}.ambient"] = list(h.ambient_profile)
        for ld in fleet.loads:
            prof[f"{ld.name}.p"] = list(ld.p_profile)
            prof[f"{ld.name}.q"] = list(ld.q_profile)
        profiles[day] = prof
    return {
        "days": profiles,
        "generators": [{**asdict(g), "cf_profile": f"{g.name}.cf"} for g in first.generators],
        "heat_pumps": [{**asdict(h), "ambient_profile": f"{h.name}.ambient"} for h in first.heat_pumps],
        "batteries": [asdict(b) for b in first.batteries],
        "ev_events": [asdict(e) for e in first.ev_events],
        "loads": [{"name": ld.name, "bus": ld.bus, "p_profile": f"{ld.name}.p", "q_profile": f"{ld.name}.q"}
                  for ld in first.loads],
    }


def load_fleet(path) -> dict[str, Fleet]:
    path = Path(path)
    return fleet_from_dict(json.loads(path.read_text()), path.parent)


def save_fleet(days: dict[str, Fleet], path) -> None:
    Path(path).write_text(json.dumps(fleet_to_dict(days), indent=1) + "\n")


def total_capacity(fleet: Fleet) -> dict[str, float]:
    return {
        "pv_kwp": sum(g.p_nom for g in fleet.generators),
        "hp_kw": sum(h.p_max for h in fleet.heat_pumps),
        "bess_kwh": sum(b.e_cap for b in fleet.batteries),
        "ev_count": len({e.vehicle for e in fleet.ev_events}),
    }


__all__ = [
    "Battery", "DerError", "DeviceBlock", "EvEvent", "FixedLoad", "Fleet", "Generator", "HeatPump",
    "ScenarioSample", "apply_scenario", "build_battery_block", "build_ev_block", "build_fleet_blocks",
    "build_generator_block", "build_heatpump_block", "fleet_from_dict", "injection_bounds", "fleet_to_dict", "load_fleet",
    "read_ev_events_csv", "round_half_up", "save_fleet", "total_capacity",
]
