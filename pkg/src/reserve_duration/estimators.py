"""Estimator-style front ends (scikit-learn conventions) over the three pipeline stages.

Constructor arguments are stored untouched, so ``get_params``/``set_params``
and ``sklearn.base.clone`` work; everything learned ends in an underscore.
"""
from __future__ import annotations

from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .design import DesignError, evaluate_design
from .ders import Fleet
from .grid import Network, branched_feeder
from .imbalance import (SEASONS, ActivationRecord, CleaningPolicy, ColumnSchema, RepresentativeProfile,
                        aggregate_hourly, build_representative_profiles, clean_series, ingest_activation_csv,
                        season_function)
from .reserve import (DIRECTIONS, OMEGA, ReserveError, ReserveOptions, SupplyProfileFamily, UncertaintySpace,
                      build_supply_family)


def _as_records(X, schema: ColumnSchema) -> list[ActivationRecord]:
    if isinstance(X, (str, bytes, bytearray, Path)) or hasattr(X, "read"):
        return ingest_activation_csv(X, schema)
    records = list(X)
    if not records or not all(isinstance(r, ActivationRecord) for r in records):
        raise TypeError("expected activation CSV data or a non-empty sequence of ActivationRecord")
    return records


class ImbalanceProfiler(BaseEstimator):
    """Clean quarter-hourly activation data and average it into seasonal daily profiles.

    ``fit`` learns ``profile_`` (a :class:`RepresentativeProfile`) and
    ``cleaning_report_``. ``transform`` returns the cleaned quarter-hour
    energies of new data; ``predict`` looks up the profile value in MW for
    ``(timestamp, direction)`` pairs.
    """

    def __init__(self, z_threshold: float = 6.0, max_gap: int = 8, window_days: int = 7,
                 units: str = "MWh", season_map=None, years=None, seasons: Sequence[str] = SEASONS):
        self.z_threshold = z_threshold
        self.max_gap = max_gap
        self.window_days = window_days
        self.units = units
        self.season_map = season_map
        self.years = years
        self.seasons = seasons

    def _policy(self) -> CleaningPolicy:
        return CleaningPolicy(self.z_threshold, self.max_gap, self.window_days)

    def fit(self, X, y=None):
        records = _as_records(X, ColumnSchema(units=self.units))
        cleaned, report = clean_series(records, self._policy(), self.season_map)
        self.profile_ = build_representative_profiles(aggregate_hourly(cleaned), self.season_map, self.years,
                                                      tuple(self.seasons))
        self.cleaning_report_ = report
        self.n_records_ = len(records)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "profile_")
        cleaned, _ = clean_series(_as_records(X, ColumnSchema(units=self.units)), self._policy(), self.season_map)
        return np.array([r.energy for r in cleaned])

    def predict(self, X: Sequence[tuple[datetime, str]]) -> np.ndarray:
        check_is_fitted(self, "profile_")
        season_of = season_function(self.season_map)
        return np.array([self.profile_.value(season_of(ts.date()), ts.hour, d) for ts, d in X])


class ReserveSupplyEstimator(BaseEstimator):
    """Monte Carlo reserve supply of a DER fleet for every candidate duration.

    ``fit`` takes a mapping of representative day -> :class:`Fleet` and
    learns ``family_`` plus a per-window ``solve_log_``. ``predict`` returns
    available reserve in kW for rows ``(duration, season, hour, direction)``.
    """

    def __init__(self, network: Network | None = None, durations: Sequence[int] = OMEGA,
                 directions: Sequence[str] = DIRECTIONS, n_samples: int = 100, seed: int = 0,
                 ramp_minutes: float = 5.0, reliability: float = 0.999, space: UncertaintySpace | None = None,
                 options: ReserveOptions | None = None, jobs: int = 1):
        self.network = network
        self.durations = durations
        self.directions = directions
        self.n_samples = n_samples
        self.seed = seed
        self.ramp_minutes = ramp_minutes
        self.reliability = reliability
        self.space = space
        self.options = options
        self.jobs = jobs

    def fit(self, X: Mapping[str, Fleet], y=None):
        if not isinstance(X, Mapping) or not X or not all(isinstance(f, Fleet) for f in X.values()):
            raise TypeError("expected a non-empty mapping of representative day -> Fleet")
        if int(self.n_samples) < 1:
            raise ReserveError("n_samples must be at least 1")
        network = self.network if self.network is not None else branched_feeder(97)
        log: list = []
        self.family_ = build_supply_family(
            network, X, tuple(self.durations), tuple(self.directions), int(self.n_samples), int(self.seed),
            self.space if self.space is not None else UncertaintySpace(), float(self.ramp_minutes),
            float(self.reliability), self.options if self.options is not None else ReserveOptions(),
            int(self.jobs), log)
        self.solve_log_ = log
        return self

    def predict(self, X: Sequence[tuple[int, str, int, str]]) -> np.ndarray:
        check_is_fitted(self, "family_")
        return np.array([self.family_.value(int(d), s, int(h), r) for d, s, h, r in X])


class DurationDesigner(BaseEstimator):
    """Score durations by availability and demand alignment, then pick one per direction.

    ``fit(family, demand)`` learns ``result_`` and ``recommendation_``
    (direction -> hours). ``transform(family)`` returns the objective pairs
    as an array ``[duration, direction, (availability, alignment)]`` against
    the fitted demand; ``predict(directions)`` returns recommended durations.
    """

    def __init__(self, weights: tuple[float, float] = (0.5, 0.5), per_duration_normalization: bool = False):
        self.weights = weights
        self.per_duration_normalization = per_duration_normalization

    def fit(self, X: SupplyProfileFamily, y: RepresentativeProfile):
        if not isinstance(X, SupplyProfileFamily):
            raise TypeError("X must be a SupplyProfileFamily")
        if not isinstance(y, RepresentativeProfile):
            raise TypeError("y must be a RepresentativeProfile (the demand side)")
        w = tuple(float(v) for v in self.weights)
        if len(w) != 2 or min(w) < 0 or not any(w):
            raise DesignError("weights must be two non-negative numbers, not both zero")
        self.demand_ = y
        self.result_ = evaluate_design(X, y, w, bool(self.per_duration_normalization))
        self.recommendation_ = {d: r.duration for d, r in self.result_.recommendations.items()}
        return self

    def transform(self, X: SupplyProfileFamily) -> np.ndarray:
        check_is_fitted(self, "result_")
        res = evaluate_design(X, self.demand_, tuple(self.weights), bool(self.per_duration_normalization))
        out = np.empty((len(X.durations), len(X.directions), 2))
        for r in res.rows:
            out[X.durations.index(r.duration), X.directions.index(r.direction)] = (r.availability_kw, r.alignment)
        return out

    def predict(self, X: Sequence[str] | None = None) -> np.ndarray:
        check_is_fitted(self, "recommendation_")
        directions = list(self.recommendation_) if X is None else list(X)
        return np.array([self.recommendation_[d] for d in directions])


__all__ = ["DurationDesigner", "ImbalanceProfiler", "ReserveSupplyEstimator"]
