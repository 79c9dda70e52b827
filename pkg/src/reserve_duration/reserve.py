"""Reserve supply potential of a DER aggregate as a function of product duration.

For every delivery window the aggregate is modelled in a dispatch state and
an activated state (full upward or downward activation). The booked quantity
``q`` is the largest PCC power difference between the two states that can be
held over the whole window; Monte Carlo over forecast errors plus a
conservative lower quantile turns per-scenario optima into the biddable
quantity.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .ders import (DeviceBlock, Fleet, ScenarioSample, apply_scenario, build_fleet_blocks,
                   injection_bounds)
from .grid import LimitScreen, Network, bind_injections, build_distflow_block, screen_limits
from .milp import (DEFAULT_TOLERANCES, EQ, GE, ITERATION_LIMIT, LE, OPTIMAL, HighsLp, InternalLp,
                   ModelBuilder, ModelSpec, Solution, Tolerances, branch_and_bound, solve)

logger = logging.getLogger(__name__)

DIRECTIONS = ("upward", "downward")
OMEGA = (1, 2, 3, 4, 6, 8, 12, 24)
HOURS_PER_DAY = 24
RESERVE_BACKENDS = ("highs", "highs-tree", "internal")


class ReserveError(ValueError):
    pass


def check_duration(duration: int, horizon: int = HOURS_PER_DAY) -> int:
    if int(duration) != duration or duration < 1 or horizon % int(duration):
        raise ReserveError(f"product duration {duration} h is not an integer divisor of {horizon}")
    return int(duration)


@dataclass(frozen=True)
class ProductSpec:
    """Reserve-capacity product under design.

    ``direction`` is ``"upward"``, ``"downward"`` or ``"symmetric"`` (both
    activations must be deliverable with one quantity).
    """

    direction: str
    duration: int
    ramp_minutes: float = 5.0
    reliability: float = 0.999
    lead_time: float = 24.0

    def __post_init__(self):
        if self.direction not in (*DIRECTIONS, "symmetric"):
            raise ReserveError(f"unknown direction {self.direction!r}")
        check_duration(self.duration)
        if not 0.0 < self.reliability < 1.0:
            raise ReserveError("reliability must lie strictly between 0 and 1")
        if self.ramp_minutes <= 0:
            raise ReserveError("ramp window must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 - self.reliability

    @property
    def active_states(self) -> tuple[str, ...]:
        return {"upward": ("up",), "downward": ("down",), "symmetric": ("up", "down")}[self.direction]


@dataclass(frozen=True)
class Window:
    start: int
    duration: int

    @property
    def hours(self) -> range:
        return range(self.start, self.start + self.duration)


def enumerate_windows(duration: int, horizon: int = HOURS_PER_DAY) -> list[Window]:
    duration = check_duration(duration, horizon)
    return [Window(s, duration) for s in range(0, horizon, duration)]


@dataclass(frozen=True)
class ReserveOptions:
    parity: bool = True
    horizon: int = HOURS_PER_DAY
    backend: str = "highs"
    # tree search limits; a window cut off by the node limit keeps its best feasible q
    node_limit: int | None = None
    rel_gap: float = 0.0
    flow_limits: bool = True
    voltage_limits: bool = True
    # drop network limits that interval bounds prove cannot bind
    screen_limits: bool = True
    tolerances: Tolerances = DEFAULT_TOLERANCES


# --- model assembly ---------------------------------------------------------

@dataclass
class StateHandles:
    state: str
    pcc: np.ndarray
    devices: list[DeviceBlock]


@dataclass
class BaseModel:
    """Reserve problem for one fleet realisation with the rows of every window.

    Window rows are stored in their active form; ``row_role`` marks which of
    them apply inside the delivery window (1), outside it (2, PCC parity) or
    always (0). :func:`window_model` switches the others off.
    """

    spec: ModelSpec
    q: int
    states: dict[str, StateHandles]
    active: tuple[str, ...]
    row_role: np.ndarray
    row_hour: np.ndarray


def network_screen(network: Network, fleet: Fleet, options: ReserveOptions = ReserveOptions()) -> LimitScreen:
    """Limits that may bind for any dispatch of ``fleet`` (same screen for every state)."""
    horizon = options.horizon
    nb = len(network.buses)
    bi = network.bus_index
    p_lo, p_hi = np.zeros((nb, horizon)), np.zeros((nb, horizon))
    q_abs = np.zeros((nb, horizon))
    for dev in fleet.devices:
        lo, hi, qa = injection_bounds(dev, horizon)
        k = bi[dev.bus]
        p_lo[k] += lo
        p_hi[k] += hi
        q_abs[k] += qa
    q_lo, q_hi = -q_abs, q_abs.copy()
    for ld in fleet.loads:
        k = bi[ld.bus]
        p_lo[k] -= np.asarray(ld.p_profile[:horizon])
        p_hi[k] -= np.asarray(ld.p_profile[:horizon])
        q_lo[k] -= np.asarray(ld.q_profile[:horizon])
        q_hi[k] -= np.asarray(ld.q_profile[:horizon])
    return screen_limits(network, p_lo, p_hi, q_lo, q_hi, options.flow_limits, options.voltage_limits)


def _add_window_rows(mb: ModelBuilder, q: int, handles: dict[str, StateHandles], states: Sequence[str],
                     ramp_minutes: float, horizon: int) -> tuple[list[int], list[int]]:
    role, hour = [], []

    def add(expr, sense, rhs, name, r):
        mb.add_constraint(expr, sense, rhs, name)
        role.append(r)
        hour.append(t)

    disp = handles["disp"]
    for state in states:
        act = handles[state]
        sign = 1.0 if state == "up" else -1.0
        for t in range(horizon):
            # q <= sign * (P_act - P_disp)
            add({q: 1.0, int(act.pcc[t]): -sign, int(disp.pcc[t]): sign}, LE, 0.0, f"link.{state}.{t}", 1)
            for d_blk, a_blk in zip(disp.devices, act.devices):
                limit = a_blk.ramp * ramp_minutes
                if limit >= a_blk.swing:
                    continue
                expr = {}
                for i, c in a_blk.injection_expr(t).items():
                    expr[i] = expr.get(i, 0.0) + c
                for i, c in d_blk.injection_expr(t).items():
                    expr[i] = expr.get(i, 0.0) - c
                if not expr:
                    continue
                add(expr, LE, limit, f"ramp.{state}.{a_blk.name}.{t}.hi", 1)
                add(expr, GE, -limit, f"ramp.{state}.{a_blk.name}.{t}.lo", 1)
            add({int(act.pcc[t]): 1.0, int(disp.pcc[t]): -1.0}, EQ, 0.0, f"parity.{state}.{t}", 2)
    return role, hour


def build_base_model(network: Network, fleet: Fleet, states: Sequence[str],
                     options: ReserveOptions = ReserveOptions(), ramp_minutes: float = 5.0) -> BaseModel:
    horizon = options.horizon
    known = set(network.bus_ids)
    for dev in [*fleet.devices, *fleet.loads]:
        if dev.bus not in known:
            raise ReserveError(f"device {getattr(dev, 'name', getattr(dev, 'vehicle', '?'))} "
                               f"sits on unknown bus {dev.bus!r}")
    screen = network_screen(network, fleet, options) if options.screen_limits else None
    # reactive power only matters where network rows remain
    reactive = screen is None or bool(screen.steps)
    mb = ModelBuilder()
    q = mb.add_var("q", 0.0, np.inf)
    handles = {}
    p_load: dict[str, np.ndarray] = {}
    q_load: dict[str, np.ndarray] = {}
    for ld in fleet.loads:
        p_load[ld.bus] = p_load.get(ld.bus, 0.0) + np.asarray(ld.p_profile[:horizon])
        q_load[ld.bus] = q_load.get(ld.bus, 0.0) + np.asarray(ld.q_profile[:horizon])
    for state in ("disp", *states):
        blocks = build_fleet_blocks(mb, fleet, state, horizon, reactive)
        grid = build_distflow_block(mb, network, state, horizon, options.flow_limits, options.voltage_limits,
                                    screen)
        p_terms: dict[str, list] = {}
        q_terms: dict[str, list] = {}
        for blk in blocks:
            p_terms.setdefault(blk.bus, []).extend(blk.injection)
            if blk.q is not None:
                q_terms.setdefault(blk.bus, []).append((blk.q, 1.0))
        bind_injections(mb, network, grid, p_terms, q_terms, p_load, q_load)
        handles[state] = StateHandles(state, grid.pcc, blocks)
    n_fixed = mb.n_rows
    role, hour = _add_window_rows(mb, q, handles, states, ramp_minutes, horizon)
    mb.set_objective({q: 1.0})
    row_role = np.concatenate([np.zeros(n_fixed, dtype=np.int8), np.asarray(role, dtype=np.int8)])
    row_hour = np.concatenate([np.full(n_fixed, -1), np.asarray(hour, dtype=int)])
    return BaseModel(mb.build(), q, handles, tuple(states), row_role, row_hour)


def _inactive_rows(base: BaseModel, window: Window, parity: bool) -> np.ndarray:
    inside = (base.row_hour >= window.start) & (base.row_hour < window.start + window.duration)
    off = (base.row_role == 1) & ~inside
    off |= (base.row_role == 2) & (inside | (not parity))
    return off


def window_row_bounds(base: BaseModel, window: Window, options: ReserveOptions = ReserveOptions()
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Row bounds ``lo <= A x <= hi`` of ``base.spec`` with the rows of ``window`` switched on."""
    lo, hi = base.spec.row_bounds()
    off = _inactive_rows(base, window, options.parity)
    lo[off] = -np.inf
    hi[off] = np.inf
    return lo, hi


def window_model(base: BaseModel, window: Window, options: ReserveOptions = ReserveOptions()) -> ModelSpec:
    """The reserve model of one window; rows that do not apply become ``<= +inf``."""
    spec = base.spec
    off = _inactive_rows(base, window, options.parity)
    senses = tuple(LE if o else s for s, o in zip(spec.senses, off))
    rhs = np.where(off, np.inf, spec.rhs)
    return ModelSpec(spec.names, spec.lb, spec.ub, spec.binary, spec.A, senses, rhs, spec.c, spec.row_names)


def assemble_reserve_model(network: Network, fleet: Fleet, product: ProductSpec, window: Window,
                           scenario: ScenarioSample | None = None,
                           options: ReserveOptions = ReserveOptions()) -> ModelSpec:
    """Full reserve-maximisation model for one window and one scenario.

    The objective is the variable named ``"q"``.
    """
    if scenario is not None:
        fleet = apply_scenario(fleet, scenario)
    base = build_base_model(network, fleet, product.active_states, options, product.ramp_minutes)
    return window_model(base, window, options)


def _nonneg(x: float) -> float:
    # solver noise can leave tiny negatives and -0.0
    return max(float(x), 0.0) + 0.0


class ReserveSession:
    """Solves the windows of one :class:`BaseModel` in turn.

    ``"highs"`` hands each window to the HiGHS MIP solver (exact within its
    gap). ``"highs-tree"`` keeps one HiGHS LP alive and only changes row
    bounds between windows, so every LP warm-starts from the last basis, and
    runs the package's branch-and-bound on top, honouring ``node_limit`` and
    ``rel_gap``; this is the fast choice for large fleets. ``"internal"``
    runs the same tree search over the NumPy simplex.
    """

    def __init__(self, base: BaseModel, options: ReserveOptions = ReserveOptions()):
        if options.backend not in RESERVE_BACKENDS:
            raise ReserveError(f"unknown backend {options.backend!r}; expected one of {RESERVE_BACKENDS}")
        self.base = base
        self.options = options
        self._lp = HighsLp(base.spec, options.tolerances) if options.backend == "highs-tree" else None

    def solve(self, window: Window) -> tuple[float, Solution]:
        """``(q, solution)``; ``q`` is the best feasible value found, 0 if none."""
        opts = self.options
        model = window_model(self.base, window, opts)
        if opts.backend == "highs":
            sol = solve(model, "highs", opts.tolerances)
        else:
            if self._lp is not None:
                self._lp.set_row_bounds(*model.row_bounds())
                oracle = self._lp
            else:
                oracle = InternalLp(model, opts.tolerances)
            sol = branch_and_bound(model, oracle, opts.tolerances, opts.node_limit, opts.rel_gap)
        if sol.values is None or sol.status not in (OPTIMAL, ITERATION_LIMIT):
            return 0.0, sol
        return _nonneg(sol.values[self.base.q]), sol


def max_reserve(network: Network, fleet: Fleet, product: ProductSpec, window: Window,
                scenario: ScenarioSample | None = None,
                options: ReserveOptions = ReserveOptions()) -> tuple[float, str]:
    """Solve one reserve problem; returns ``(q*, status)``, ``q* = 0`` when nothing feasible was found."""
    if scenario is not None:
        fleet = apply_scenario(fleet, scenario)
    base = build_base_model(network, fleet, product.active_states, options, product.ramp_minutes)
    q, sol = ReserveSession(base, options).solve(window)
    return q, sol.status


# --- uncertainty --------------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "normal" and self.b < 0:
            raise ReserveError("normal distribution needs a non-negative standard deviation")
        if self.kind == "uniform" and self.b < self.a:
            raise ReserveError("uniform distribution needs low <= high")
        if self.kind not in ("normal", "uniform"):
            raise ReserveError(f"unknown distribution {self.kind!r}")

    def ppf(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        if self.b == 0:
            return np.full_like(u, self.a)
        return self.a + self.b * ndtri(u)


def normal(mean: float, std: float) -> Distribution:
    return Distribution("normal", mean, std)


def uniform(low: float, high: float) -> Distribution:
    return Distribution("uniform", low, high)


@dataclass(frozen=True)
class UncertaintySpace:
    """Forecast-error distributions of the day-ahead inputs."""

    irr_sigma: float = 0.0815
    temp_sigma: float = 1.50
    load_sigma: float = 0.1075
    disruption_low: float = 0.0
    disruption_high: float = 0.20

    def dimensions(self) -> list[tuple[str, Distribution]]:
        return [
            ("irr_error", normal(0.0, self.irr_sigma)),
            ("temp_error", normal(0.0, self.temp_sigma)),
            ("load_error", normal(0.0, self.load_sigma)),
            ("ev_disruption", uniform(self.disruption_low, self.disruption_high)),
        ]

    @property
    def is_deterministic(self) -> bool:
        return not any((self.irr_sigma, self.temp_sigma, self.load_sigma,
                        self.disruption_low, self.disruption_high))


def latin_hypercube(n: int, dists: Sequence[Distribution], rng: np.random.Generator) -> np.ndarray:
    """``(n, len(dists))`` sample: each column puts exactly one point per 1/n stratum."""
    if n < 1:
        raise ReserveError("need at least one sample")
    out = np.empty((n, len(dists)))
    for j, dist in enumerate(dists):
        strata = rng.permutation(n)
        u = (strata + rng.random(n)) / n
        u = np.clip(u, 1e-15, 1 - 1e-15)
        out[:, j] = dist.ppf(u)
    return out


def lhs_sample(space: UncertaintySpace, n: int, seed: int) -> list[ScenarioSample]:
    rng = np.random.default_rng(seed)
    dims = space.dimensions()
    values = latin_hypercube(n, [d for _, d in dims], rng)
    removal = rng.integers(0, 2**31 - 1, size=n)
    samples = []
    for k in range(n):
        kw = {name: float(values[k, j]) for j, (name, _) in enumerate(dims)}
        samples.append(ScenarioSample(**kw, removal_seed=int(removal[k])))
    return samples


def quantile_rank(n: int, alpha: float) -> int:
    return max(1, int(math.floor(alpha * n + 1e-9)))


def reliability_quantile(samples: Iterable[float], alpha: float) -> float:
    """Conservative lower order statistic: the ``max(1, floor(alpha N))``-th smallest sample."""
    values = np.sort(np.asarray(list(samples), dtype=float))
    if values.size == 0:
        raise ReserveError("no samples")
    if not 0.0 < alpha < 1.0:
        raise ReserveError("alpha must lie strictly between 0 and 1")
    return float(values[quantile_rank(values.size, alpha) - 1])


# --- supply family --------------------------------------------------------------

@dataclass
class SupplyProfileFamily:
    """Available reserve in kW indexed ``[duration, season, hour, direction]``."""

    durations: tuple[int, ...]
    seasons: tuple[str, ...]
    directions: tuple[str, ...]
    values: np.ndarray
    n_samples: int
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.durations = tuple(int(d) for d in self.durations)
        self.seasons = tuple(self.seasons)
        self.directions = tuple(self.directions)
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.durations), len(self.seasons), HOURS_PER_DAY, len(self.directions))
        if self.values.shape != expected:
            raise ReserveError(f"family values have shape {self.values.shape}, expected {expected}")

    def profile(self, duration: int, direction: str) -> np.ndarray:
        """``(season, hour)`` array for one duration and direction."""
        try:
            i = self.durations.index(int(duration))
            k = self.directions.index(direction)
        except ValueError:
            raise ReserveError(f"family has no entry for duration {duration} / {direction}") from None
        return self.values[i, :, :, k]

    def value(self, duration: int, season: str, hour: int, direction: str) -> float:
        return float(self.profile(duration, direction)[self.seasons.index(season), hour])

    def scaled(self, k: float) -> "SupplyProfileFamily":
        return SupplyProfileFamily(self.durations, self.seasons, self.directions, self.values * k,
                                   self.n_samples, self.seed, dict(self.meta))

    def __len__(self) -> int:
        return int(self.values.size)

    def to_csv(self) -> str:
        """Long format: ``duration,season,hour,direction,value_kw``."""
        lines = ["duration,season,hour,direction,value_kw"]
        for i, d in enumerate(self.durations):
            for s, season in enumerate(self.seasons):
                for h in range(self.values.shape[2]):
                    for k, direction in enumerate(self.directions):
                        lines.append(f"{d},{season},{h},{direction},{self.values[i, s, h, k]!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "durations": list(self.durations), "seasons": list(self.seasons),
            "directions": list(self.directions), "n_samples": self.n_samples, "seed": self.seed,
            "unit": "kW", "meta": self.meta,
            "values": {dr: {str(d): {s: [float(v) for v in self.values[i, j, :, k]]
                                     for j, s in enumerate(self.seasons)}
                            for i, d in enumerate(self.durations)}
                       for k, dr in enumerate(self.directions)},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SupplyProfileFamily":
        try:
            durations, seasons = tuple(data["durations"]), tuple(data["seasons"])
            directions = tuple(data["directions"])
            vals = np.array([[[data["values"][dr][str(d)][s] for dr in directions] for s in seasons]
                             for d in durations])
        except (KeyError, TypeError) as exc:
            raise ReserveError(f"malformed supply family: missing {exc}") from None
        # stored as [duration, season, direction, hour]
        return cls(durations, seasons, directions, vals.transpose(0, 1, 3, 2), int(data["n_samples"]),
                   int(data["seed"]), dict(data.get("meta", {})))


@dataclass(frozen=True)
class _Task:
    day: str
    direction: str
    scenario_index: int


def _solve_task(args) -> tuple[np.ndarray, list[str], np.ndarray, float]:
    """One scenario of one day and direction: q, status and remaining gap per window."""
    network, fleet, sample, direction, durations, product_kw, options = args
    t0 = time.perf_counter()
    realised = apply_scenario(fleet, sample)
    state = {"upward": ("up",), "downward": ("down",)}[direction]
    base = build_base_model(network, realised, state, options, product_kw["ramp_minutes"])
    session = ReserveSession(base, options)
    out, statuses, gaps = [], [], []
    for d in durations:
        for w in enumerate_windows(d, options.horizon):
            q, sol = session.solve(w)
            out.append(q)
            statuses.append(sol.status)
            gaps.append(float(sol.info.get("gap", 0.0)) if sol.info else 0.0)
    return np.array(out), statuses, np.array(gaps), time.perf_counter() - t0


def build_supply_family(network: Network, fleet_days: Mapping[str, Fleet],
                        durations: Sequence[int] = OMEGA, directions: Sequence[str] = DIRECTIONS,
                        n_samples: int = 1000, seed: int = 0,
                        space: UncertaintySpace = UncertaintySpace(),
                        ramp_minutes: float = 5.0, reliability: float = 0.999,
                        options: ReserveOptions = ReserveOptions(), jobs: int = 1,
                        log: list | None = None) -> SupplyProfileFamily:
    """Monte Carlo reserve supply for every duration, representative day, window and direction.

    ``log``, when given, receives one dict per (day, direction, duration,
    window) with solve statuses, the quantile and the elapsed wall time.
    """
    durations = tuple(check_duration(d, options.horizon) for d in durations)
    for d in directions:
        if d not in DIRECTIONS:
            raise ReserveError(f"unknown direction {d!r}")
    samples = lhs_sample(space, n_samples, seed)
    alpha = 1.0 - reliability
    product_kw = {"ramp_minutes": ramp_minutes, "reliability": reliability}
    days = tuple(fleet_days)
    tasks = [(day, direction, k) for day in days for direction in directions for k in range(n_samples)]
    args = [(network, fleet_days[day], samples[k], direction, durations, product_kw, options)
            for day, direction, k in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_task, args, chunksize=1))
    else:
        results = [_solve_task(a) for a in args]

    windows = [(d, w) for d in durations for w in enumerate_windows(d, options.horizon)]
    values = np.zeros((len(durations), len(days), HOURS_PER_DAY, len(directions)))
    by_key = {}
    for (day, direction, k), res in zip(tasks, results):
        by_key[(day, direction, k)] = res
    for si, day in enumerate(days):
        for ki, direction in enumerate(directions):
            q_all = np.stack([by_key[(day, direction, k)][0] for k in range(n_samples)])
            st_all = [by_key[(day, direction, k)][1] for k in range(n_samples)]
            gap_all = np.stack([by_key[(day, direction, k)][2] for k in range(n_samples)])
            wall = sum(by_key[(day, direction, k)][3] for k in range(n_samples))
            for wi, (d, w) in enumerate(windows):
                col = q_all[:, wi]
                statuses = [s[wi] for s in st_all]
                n_bad = sum(s not in (OPTIMAL, ITERATION_LIMIT) for s in statuses)
                n_limit = sum(s == ITERATION_LIMIT for s in statuses)
                if n_bad == n_samples:
                    logger.warning("reserve unavailable: %s %s t_p=%d window %d infeasible in every scenario",
                                   day, direction, d, w.start)
                elif n_bad:
                    logger.warning("%s %s t_p=%d window %d: %d of %d scenarios infeasible",
                                   day, direction, d, w.start, n_bad, n_samples)
                qv = reliability_quantile(col, alpha)
                values[durations.index(d), si, w.start:w.start + d, ki] = qv
                if log is not None:
                    log.append({"season": day, "direction": direction, "duration": d, "window_start": w.start,
                                "quantile_kw": qv, "n_optimal": n_samples - n_bad - n_limit,
                                "n_node_limit": n_limit, "max_gap_kw": float(gap_all[:, wi].max()),
                                "n_samples": n_samples,
                                "min_kw": float(col.min()), "max_kw": float(col.max()),
                                "wall_time_s": wall / len(windows)})
    return SupplyProfileFamily(durations, days, tuple(directions), values, n_samples, seed,
                               {"alpha": alpha, "reliability": reliability, "ramp_minutes": ramp_minutes,
                                "parity": options.parity, "backend": options.backend,
                                "node_limit": options.node_limit, "rel_gap": options.rel_gap})
