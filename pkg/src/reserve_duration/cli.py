"""Command-line front end: ``profiles``, ``supply``, ``design`` and ``run-all``.

Every CSV starts with a ``# config_hash: ...`` comment line and every JSON
carries a ``config_hash`` field. Logs go to ``run.log.jsonl`` (one JSON
object per line) and per-window solve statistics to ``solve_log.jsonl``;
both contain wall-clock data and are not part of the reproducible outputs.

Exit codes: 0 success, 1 runtime failure, 2 bad input or configuration.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Mapping, Sequence

from .config import (ConfigError, config_hash, load_config, reserve_options, resolve_path, resolved,
                     uncertainty_space)
from .ders import DerError, load_fleet
from .design import DesignError, evaluate_design, overlay_csv, scatter_csv
from .grid import NetworkError, branched_feeder, load_network, validate_radial
from .imbalance import (CleaningPolicy, ColumnSchema, ImbalanceDataError, RepresentativeProfile,
                        aggregate_hourly, build_representative_profiles, clean_series, ingest_activation_csv)
from .milp import ModelError
from .reserve import ReserveError, SupplyProfileFamily, build_supply_family
from .synthetic import activation_csv, case_study_fleet, five_bus_fleet, five_bus_network

logger = logging.getLogger("reserve_duration")

INPUT_ERRORS = (ConfigError, ImbalanceDataError, NetworkError, DerError, ReserveError, DesignError, ModelError,
                FileNotFoundError, json.JSONDecodeError)

PROFILES_CSV, PROFILES_JSON, CLEANING_JSON = "profiles.csv", "profiles.json", "cleaning_report.json"
FAMILY_CSV, FAMILY_JSON, SOLVE_LOG = "supply_family.csv", "supply_family.json", "solve_log.jsonl"
DESIGN_CSV, DESIGN_JSON = "design.csv", "design.json"
SCATTER_CSV, OVERLAY_CSV = "objective_scatter.csv", "supply_demand_overlay.csv"


class _JsonLines(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"time": round(record.created, 3), "level": record.levelname.lower(), "logger": record.name,
                 "message": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, sort_keys=True)


def _setup_logging(out: Path, level: str) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log.jsonl", mode="a", encoding="utf-8")
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("reserve_duration")
    root.setLevel(getattr(logging, level.upper()))
    root.addHandler(handler)
    return handler


def _event(message: str, **fields) -> None:
    logger.info(message, extra={"fields": fields})


# --- output helpers ------------------------------------------------------------

def _write_csv(path: Path, text: str, digest: str) -> None:
    path.write_text(f"# config_hash: {digest}\n{text}", encoding="utf-8")


def _write_json(path: Path, payload: Mapping, digest: str) -> None:
    data = dict(payload)
    data["config_hash"] = digest
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


# --- stages ------------------------------------------------------------------

def _activation_source(cfg: Mapping):
    data = cfg["data"]
    if data["activation"]:
        return resolve_path(cfg, data["activation"])
    return activation_csv(int(data["year"]), int(cfg["seed"]))


def run_profiles(cfg: Mapping, out: Path) -> RepresentativeProfile:
    data, cl = cfg["data"], cfg["cleaning"]
    digest = config_hash(cfg)
    schema = ColumnSchema(data["timestamp_column"], data["direction_column"], data["value_column"],
                          data["delimiter"], data["units"])
    records = ingest_activation_csv(_activation_source(cfg), schema)
    cleaned, report = clean_series(records, CleaningPolicy(cl["z_threshold"], cl["max_gap"], cl["window_days"]))
    profile = build_representative_profiles(aggregate_hourly(cleaned))
    _write_csv(out / PROFILES_CSV, profile.to_csv(), digest)
    _write_json(out / PROFILES_JSON, profile.to_dict(), digest)
    _write_json(out / CLEANING_JSON, report.to_dict(), digest)
    _event("profiles written", records=len(records), **report.to_dict())
    return profile


def build_network(cfg: Mapping):
    net = cfg["network"]
    if net["source"] == "case-study":
        network = branched_feeder(int(net["n_buses"]), int(net["n_feeders"]), int(net["seed"]))
    elif net["source"] == "five-bus":
        network = five_bus_network()
    else:
        network = load_network(resolve_path(cfg, net["source"]))
    check = validate_radial(network)
    if not check:
        raise NetworkError(check.message)
    return network


def build_fleet(cfg: Mapping, network):
    fl = cfg["fleet"]
    if fl["source"] == "case-study":
        return case_study_fleet(network, int(fl["seed"]), float(fl["pv_kwp"]), float(fl["hp_kw"]),
                                float(fl["bess_kwh"]), int(fl["n_evs"]), float(fl["ev_kwh"]), float(fl["ev_kw"]),
                                float(fl["v2g_share"]), float(fl["load_peak_kw"]))
    if fl["source"] == "five-bus":
        return five_bus_fleet()
    return load_fleet(resolve_path(cfg, fl["source"]))


def run_supply(cfg: Mapping, out: Path) -> SupplyProfileFamily:
    prod, opts = cfg["product"], reserve_options(cfg)
    digest = config_hash(cfg)
    network = build_network(cfg)
    fleet_days = build_fleet(cfg, network)
    n = int(cfg["uncertainty"]["samples"])
    _event("supply started", buses=len(network.buses), days=list(fleet_days), samples=n, jobs=int(cfg["jobs"]),
           durations=list(prod["durations"]), directions=list(prod["directions"]))
    log: list = []
    t0 = time.perf_counter()
    family = build_supply_family(network, fleet_days, tuple(prod["durations"]), tuple(prod["directions"]), n,
                                 int(cfg["seed"]), uncertainty_space(cfg), float(prod["ramp_minutes"]),
                                 float(prod["reliability"]), opts, int(cfg["jobs"]), log)
    elapsed = time.perf_counter() - t0
    family.meta.update(config_hash=digest, lead_time=float(prod["lead_time"]),
                       tolerances=dataclasses.asdict(opts.tolerances))
    _write_csv(out / FAMILY_CSV, family.to_csv(), digest)
    _write_json(out / FAMILY_JSON, family.to_dict(), digest)
    with open(out / SOLVE_LOG, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    _event("supply written", wall_time_s=round(elapsed, 3), windows=len(log))
    return family


def run_design(cfg: Mapping, out: Path, family: SupplyProfileFamily | None = None,
               demand: RepresentativeProfile | None = None):
    digest = config_hash(cfg)
    if demand is None:
        demand = RepresentativeProfile.from_dict(_read_json(out / PROFILES_JSON))
    if family is None:
        family = SupplyProfileFamily.from_dict(_read_json(out / FAMILY_JSON))
    des = cfg["design"]
    result = evaluate_design(family, demand, tuple(des["weights"]), bool(des["per_duration_normalization"]))
    result.meta["config_hash"] = digest
    _write_csv(out / DESIGN_CSV, result.table_csv(), digest)
    _write_json(out / DESIGN_JSON, result.to_dict(), digest)
    _write_csv(out / SCATTER_CSV, scatter_csv(result), digest)
    _write_csv(out / OVERLAY_CSV, overlay_csv(family, demand, result, bool(des["per_duration_normalization"])),
               digest)
    for direction, rec in result.recommendations.items():
        _event("recommendation", direction=direction, duration=rec.duration, score=rec.score)
        print(f"{direction}: recommended duration {rec.duration} h (score {rec.score:.4f})")
    return result


# --- argument handling -----------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_pair(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reserve-duration",
                                     description="Duration design for reserve-capacity products.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("profiles", "representative activation profiles from activation data"),
                            ("supply", "Monte Carlo reserve supply family of the DER fleet"),
                            ("design", "score durations and recommend one per direction"),
                            ("run-all", "profiles, supply and design in one go")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="TOML file layered over the packaged defaults")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="parallel scenario workers (results do not depend on it)")
        p.add_argument("--samples", type=int, help="Monte Carlo samples per window")
        p.add_argument("--durations", type=_int_list, help="comma-separated product durations in hours")
        p.add_argument("--direction", choices=("upward", "downward", "both"))
        p.add_argument("--parity", choices=("on", "off"), help="hold the schedule outside the delivery window")
        p.add_argument("--weights", type=_float_pair, help="availability,alignment selection weights")
        p.add_argument("--out", type=Path)
        p.add_argument("--log-level", default="info", choices=("debug", "info", "warning", "error"))
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.jobs is not None:
        o["jobs"] = args.jobs
    if args.out is not None:
        o["out"] = str(args.out)
    product = {}
    if args.durations is not None:
        product["durations"] = args.durations
    if args.direction is not None:
        product["directions"] = ["upward", "downward"] if args.direction == "both" else [args.direction]
    if args.parity is not None:
        product["parity"] = args.parity == "on"
    if product:
        o["product"] = product
    if args.samples is not None:
        o["uncertainty"] = {"samples": args.samples}
    if args.weights is not None:
        o["design"] = {"weights": args.weights}
    return o


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    handler = _setup_logging(out, args.log_level)
    _event("run started", command=args.command, config_hash=config_hash(cfg), config=resolved(cfg))
    try:
        if args.command == "profiles":
            run_profiles(cfg, out)
        elif args.command == "supply":
            run_supply(cfg, out)
        elif args.command == "design":
            run_design(cfg, out)
        else:
            demand = run_profiles(cfg, out)
            family = run_supply(cfg, out)
            run_design(cfg, out, family, demand)
        _event("run finished", command=args.command)
    except INPUT_ERRORS as exc:
        logger.error("input error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported and mapped to exit code 1
        logger.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    finally:
        logging.getLogger("reserve_duration").removeHandler(handler)
        handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
