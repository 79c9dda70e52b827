"""Two-objective evaluation of candidate product durations.

Availability is the mean available reserve over all representative days
and hours. Alignment is the negative mean squared gap between the
normalised supply curve and the normalised demand (activation) curve;
supply is normalised by its maximum over every duration, demand by its
own maximum, so a longer product whose supply is uniformly lower also
scores a worse fit.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .imbalance import RepresentativeProfile
from .reserve import SupplyProfileFamily

logger = logging.getLogger(__name__)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizedProfile:
    values: np.ndarray
    normalizer: float


def normalize(profile, global_max: float) -> NormalizedProfile:
    """Divide by ``global_max``; an all-zero profile maps to zeros with a warning."""
    arr = np.asarray(profile, dtype=float)
    if np.any(arr < 0):
        raise DesignError("cannot normalise a profile with negative entries")
    if not np.any(arr):
        logger.warning("normalising an identically zero profile; result is all zeros")
        return NormalizedProfile(np.zeros_like(arr), float(global_max))
    if not global_max > 0:
        raise DesignError(f"normaliser must be positive, got {global_max}")
    return NormalizedProfile(arr / global_max, float(global_max))


def availability_objective(family: SupplyProfileFamily, duration: int, direction: str) -> float:
    """Mean available reserve in kW over all (season, hour) cells."""
    return float(np.mean(family.profile(duration, direction)))


def supply_normalizer(family: SupplyProfileFamily, direction: str, duration: int | None = None) -> float:
    """Max over every duration, season and hour; over one duration only when ``duration`` is given."""
    k = family.directions.index(direction)
    if duration is None:
        return float(family.values[:, :, :, k].max())
    return float(family.profile(duration, direction).max())


def matched_demand(demand: RepresentativeProfile, seasons: Sequence[str], direction: str) -> np.ndarray:
    """Demand ``(season, hour)`` array on the supply's season set (merged seasons are averaged)."""
    try:
        return demand.on_seasons(seasons).direction(direction)
    except ValueError as exc:
        raise DesignError(f"demand and supply grids do not match: {exc}") from None


def alignment_objective(family: SupplyProfileFamily, duration: int, direction: str,
                        demand: RepresentativeProfile, per_duration_normalization: bool = False) -> float:
    """Negative mean squared gap between normalised supply and demand (0 is a perfect fit)."""
    supply = family.profile(duration, direction)
    dem = matched_demand(demand, family.seasons, direction)
    if dem.shape != supply.shape:
        raise DesignError(f"demand grid {dem.shape} differs from supply grid {supply.shape}")
    s_norm = supply_normalizer(family, direction, duration if per_duration_normalization else None)
    s = normalize(supply, s_norm).values
    d = normalize(dem, float(dem.max())).values
    return float(-np.mean((s - d) ** 2)) + 0.0


@dataclass
class DesignRow:
    duration: int
    direction: str
    availability_kw: float
    alignment: float
    pareto: bool = False


def dominates(a: DesignRow, b: DesignRow) -> bool:
    """``a`` is at least as good as ``b`` in both objectives and better in one."""
    return (a.availability_kw >= b.availability_kw and a.alignment >= b.alignment
            and (a.availability_kw > b.availability_kw or a.alignment > b.alignment))


def pareto_front(rows: Iterable[DesignRow]) -> list[DesignRow]:
    """Flag the non-dominated durations, separately per direction."""
    rows = list(rows)
    for r in rows:
        peers = [o for o in rows if o.direction == r.direction and o is not r]
        r.pareto = not any(dominates(o, r) for o in peers)
    return rows


@dataclass
class Recommendation:
    direction: str
    duration: int
    score: float
    weights: tuple[float, float]
    scores: dict[int, float] = field(default_factory=dict)


def select_duration(rows: Iterable[DesignRow], weights: tuple[float, float] = (0.5, 0.5),
                    direction: str | None = None) -> Recommendation:
    """Weighted pick among the Pareto-optimal durations; ties go to the shorter product.

    Score = ``w_a * availability / max availability + w_m * alignment / |min alignment|``.
    """
    rows = [r for r in rows if direction is None or r.direction == direction]
    if not rows:
        raise DesignError("no evaluated durations")
    dirs = {r.direction for r in rows}
    if len(dirs) > 1:
        raise DesignError(f"rows mix directions {sorted(dirs)}; pass direction=")
    w_a, w_m = (float(w) for w in weights)
    a_max = max(r.availability_kw for r in rows)
    m_min = abs(min(r.alignment for r in rows))
    scores = {}
    for r in rows:
        a = r.availability_kw / a_max if a_max > 0 else 0.0
        m = r.alignment / m_min if m_min > 0 else 0.0
        scores[r.duration] = w_a * a + w_m * m
    front = sorted((r for r in rows if r.pareto), key=lambda r: r.duration)
    if not front:
        raise DesignError("Pareto set is empty; run pareto_front first")
    best = front[0]
    for r in front[1:]:
        if scores[r.duration] > scores[best.duration] + 1e-12:
            best = r
    return Recommendation(best.direction, best.duration, scores[best.duration], (w_a, w_m), scores)


@dataclass
class DesignResult:
    rows: list[DesignRow]
    recommendations: dict[str, Recommendation]
    meta: dict = field(default_factory=dict)

    def table_csv(self) -> str:
        buf = io.StringIO()
        buf.write("duration,direction,availability_kw,alignment,pareto\n")
        for r in self.rows:
            buf.write(f"{r.duration},{r.direction},{r.availability_kw!r},{r.alignment!r},{str(r.pareto).lower()}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [{"duration": r.duration, "direction": r.direction, "availability_kw": r.availability_kw,
                      "alignment": r.alignment, "pareto": r.pareto} for r in self.rows],
            "recommendations": {d: {"duration": rec.duration, "score": rec.score, "weights": list(rec.weights),
                                    "scores": {str(k): v for k, v in rec.scores.items()}}
                                for d, rec in self.recommendations.items()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_design(family: SupplyProfileFamily, demand: RepresentativeProfile,
                    weights: tuple[float, float] = (0.5, 0.5),
                    per_duration_normalization: bool = False) -> DesignResult:
    """Score every duration and direction of ``family`` and pick one duration per direction."""
    rows = []
    for direction in family.directions:
        if direction not in demand.directions:
            raise DesignError(f"demand profile has no {direction} direction")
        for d in family.durations:
            rows.append(DesignRow(d, direction, availability_objective(family, d, direction),
                                  alignment_objective(family, d, direction, demand, per_duration_normalization)))
    pareto_front(rows)
    recs = {direction: select_duration(rows, weights, direction) for direction in family.directions}
    return DesignResult(rows, recs, {"weights": list(weights),
                                     "per_duration_normalization": per_duration_normalization})


# --- plot data ----------------------------------------------------------------

def scatter_csv(result: DesignResult) -> str:
    buf = io.StringIO()
    buf.write("direction,duration,availability_kw,alignment,pareto,selected\n")
    for r in result.rows:
        sel = result.recommendations[r.direction].duration == r.duration
        buf.write(f"{r.direction},{r.duration},{r.availability_kw!r},{r.alignment!r},"
                  f"{str(r.pareto).lower()},{str(sel).lower()}\n")
    return buf.getvalue()


def overlay_csv(family: SupplyProfileFamily, demand: RepresentativeProfile, result: DesignResult,
                per_duration_normalization: bool = False) -> str:
    """Normalised supply of the selected duration next to normalised demand, per direction."""
    buf = io.StringIO()
    buf.write("direction,duration,season,hour,supply_norm,demand_norm\n")
    for direction, rec in result.recommendations.items():
        supply = family.profile(rec.duration, direction)
        norm = supply_normalizer(family, direction, rec.duration if per_duration_normalization else None)
        s = normalize(supply, norm).values
        dem = matched_demand(demand, family.seasons, direction)
        d = normalize(dem, float(dem.max())).values
        for i, season in enumerate(family.seasons):
            for h in range(s.shape[1]):
                buf.write(f"{direction},{rec.duration},{season},{h},{s[i, h]!r},{d[i, h]!r}\n")
    return buf.getvalue()


__all__ = [
    "DesignError", "DesignResult", "DesignRow", "NormalizedProfile", "Recommendation",
    "alignment_objective", "availability_objective", "dominates", "evaluate_design", "matched_demand",
    "normalize", "overlay_csv", "pareto_front", "scatter_csv", "select_duration", "supply_normalizer",
]
