"""Run configuration: packaged TOML defaults, user file on top, CLI overrides last."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .reserve import HOURS_PER_DAY, RESERVE_BACKENDS, ReserveOptions, UncertaintySpace

# keys that change how a run executes but never what it produces
_RUNTIME_KEYS = ("jobs", "out")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    text = resources.files("reserve_duration").joinpath("data/default_config.toml").read_text()
    return tomllib.loads(text)


def _merge(base: dict, update: Mapping, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {where!r} must be a table")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> dict:
    """Defaults, then the TOML file at ``path``, then ``overrides`` (same nesting)."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        try:
            user = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        _merge(cfg, user)
        cfg["_base_dir"] = str(path.resolve().parent)
    if overrides:
        _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: Mapping) -> None:
    prod, unc, sol = cfg["product"], cfg["uncertainty"], cfg["solver"]
    for d in prod["durations"]:
        if not isinstance(d, int) or d < 1 or HOURS_PER_DAY % d:
            raise ConfigError(f"duration {d!r} is not an integer divisor of {HOURS_PER_DAY}")
    if len(set(prod["durations"])) != len(prod["durations"]) or not prod["durations"]:
        raise ConfigError("durations must be a non-empty list without repeats")
    for d in prod["directions"]:
        if d not in ("upward", "downward"):
            raise ConfigError(f"unknown direction {d!r}")
    if not 0.0 < prod["reliability"] < 1.0:
        raise ConfigError("reliability must lie strictly between 0 and 1")
    if prod["ramp_minutes"] <= 0:
        raise ConfigError("ramp_minutes must be positive")
    for key in ("irr_sigma", "temp_sigma", "load_sigma"):
        if unc[key] < 0:
            raise ConfigError(f"uncertainty.{key} must be non-negative")
    if not 0.0 <= unc["disruption_low"] <= unc["disruption_high"] <= 1.0:
        raise ConfigError("need 0 <= disruption_low <= disruption_high <= 1")
    if int(unc["samples"]) < 1:
        raise ConfigError("uncertainty.samples must be at least 1")
    if sol["backend"] not in RESERVE_BACKENDS:
        raise ConfigError(f"solver.backend must be one of {RESERVE_BACKENDS}")
    if int(sol["node_limit"]) < 0:
        raise ConfigError("solver.node_limit must be non-negative (0 means no limit)")
    if int(cfg["jobs"]) < 1:
        raise ConfigError("jobs must be at least 1")
    w = cfg["design"]["weights"]
    if len(w) != 2 or any(x < 0 for x in w) or not any(w):
        raise ConfigError("design.weights needs two non-negative numbers, not both zero")


def config_hash(cfg: Mapping) -> str:
    """SHA-256 over everything that can influence results (not jobs or the output directory)."""
    content = {k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS and not k.startswith("_")}
    blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def resolved(cfg: Mapping) -> dict:
    """Copy without private bookkeeping keys, for embedding in outputs."""
    return {k: copy.deepcopy(v) for k, v in cfg.items() if not k.startswith("_")}


def reserve_options(cfg: Mapping) -> ReserveOptions:
    sol, net = cfg["solver"], cfg["network"]
    node_limit = int(sol["node_limit"])
    return ReserveOptions(parity=bool(cfg["product"]["parity"]), backend=sol["backend"],
                          node_limit=node_limit or None,
                          rel_gap=float(sol["rel_gap"]), flow_limits=bool(net["flow_limits"]),
                          voltage_limits=bool(net["voltage_limits"]))


def uncertainty_space(cfg: Mapping) -> UncertaintySpace:
    u = cfg["uncertainty"]
    return UncertaintySpace(float(u["irr_sigma"]), float(u["temp_sigma"]), float(u["load_sigma"]),
                            float(u["disruption_low"]), float(u["disruption_high"]))


def resolve_path(cfg: Mapping, value: str) -> Path:
    p = Path(value)
    if not p.is_absolute() and "_base_dir" in cfg:
        p = Path(cfg["_base_dir"]) / p
    return p


__all__ = ["ConfigError", "config_hash", "default_config", "load_config", "reserve_options", "resolve_path",
           "resolved", "uncertainty_space", "validate_config"]

