"""
Command-line front end: validated JSON configs, subcommand dispatch, atomic artifacts.

Exit status 0 means success, 1 a computation error, 2 a configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import jsonschema
import numpy as np

from . import evaluation as ev
from .designer import DesignResult, SdrSettings, design
from .oracle import DEFAULT_BUDGET, exhaustive_search, write_search_csv
from .scenario import (
    ArrayGeometry,
    Band,
    Scenario,
    ScenarioError,
    SourceSpec,
    analytic_bin_correlations,
    estimate_bin_correlations,
    synthesize_snapshots,
)
from .tdl import build_stacked_correlations, tdl_design, tdl_exhaustive

log = logging.getLogger("sparse_wideband")

COMMANDS = ("design", "enumerate", "tdl-design", "tdl-enumerate", "beampattern", "sweep", "compare")
EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2
THREADS_ENV = "SPARSE_WIDEBAND_THREADS"
FULL_DUMP_MAX_N = 12
EXAMPLE_CONFIG = Path(__file__).resolve().parent / "data" / "example1.json"

_SOURCE = {
    "type": "object",
    "properties": {
        "doa_deg": {"type": "number", "minimum": 0, "maximum": 180},
        "power_db": {"type": "number"},
    },
    "required": ["doa_deg"],
    "additionalProperties": False,
}

_SETTINGS_PROPS = {
    "epsilon": {"type": "number", "exclusiveMinimum": 0},
    "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "max_reweight_iters": {"type": "integer", "minimum": 1},
    "mu_lower": {"type": "number", "minimum": 0},
    "mu_upper": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "mu_upper_factor": {"type": "number", "exclusiveMinimum": 0},
    "loop_mu_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "max_bisection_iters": {"type": "integer", "minimum": 1},
    "stable_iters": {"type": "integer", "minimum": 1},
    "reweight_mode": {"enum": ["eigen", "envelope"]},
    "init_tilt": {"type": "number"},
    "selection_constraint": {"enum": ["sum", "per_bin"]},
    "tol_gap": {"type": "number", "exclusiveMinimum": 0},
    "tol_feas": {"type": "number", "exclusiveMinimum": 0},
    "max_solver_iters": {"type": "integer", "minimum": 1},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "n_positions": {"type": "integer", "minimum": 1},
        "positions": {"type": ["array", "null"], "items": {"type": "integer"}},
        "bin_count": {"type": "integer", "minimum": 1},
        "carrier": {"type": "number", "exclusiveMinimum": 0},
        "bandwidth": {"type": "number", "exclusiveMinimum": 0},
        "noise_power_db": {"type": "number"},
        "desired": _SOURCE,
        "interferers": {"type": "array", "items": _SOURCE},
        "P": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "snapshots": {"type": ["integer", "null"], "minimum": 1},
        "settings": {"type": "object", "properties": _SETTINGS_PROPS, "additionalProperties": False},
        "sweep": {
            "type": "object",
            "properties": {
                "shift_step_deg": {"type": "number"},
                "n_steps": {"type": "integer", "minimum": 0},
                "columns": {
                    "type": "array",
                    "items": {"enum": list(ev.SWEEP_COLUMNS)},
                    "uniqueItems": True,
                    "minItems": 1,
                },
            },
            "additionalProperties": False,
        },
        "grid_step_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
        "enumeration_budget": {"type": "integer", "minimum": 1},
        "tdl_max_real_dim": {"type": "integer", "minimum": 2},
    },
    "required": ["n_positions", "bin_count", "desired", "P"],
    "additionalProperties": False,
}

DEFAULTS: Dict[str, Any] = {
    "positions": None,
    "carrier": 0.75,
    "bandwidth": 0.5,
    "noise_power_db": 0.0,
    "interferers": [],
    "seed": 0,
    "snapshots": None,
    "settings": SdrSettings().to_dict(),
    "sweep": {"shift_step_deg": -5.0, "n_steps": 6, "columns": list(ev.SWEEP_COLUMNS)},
    "grid_step_deg": ev.DEFAULT_GRID_STEP,
    "enumeration_budget": DEFAULT_BUDGET,
    "tdl_max_real_dim": 96,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: Dict[str, Any]  # fully resolved, JSON-serializable
    scenario: Scenario
    settings: SdrSettings

    @property
    def P(self) -> int:
        return self.raw["P"]


def _set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
        else:
            node = node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def apply_overrides(cfg: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.sub=value`` assignments; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        try:
            _set_path(cfg, key.strip(), value)
        except (IndexError, ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"override {item!r}: cannot set {key}: {exc}") from exc
    return cfg


def _with_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    out["desired"] = {"power_db": 0.0, **out["desired"]}
    out["interferers"] = [{"power_db": 0.0, **j} for j in out["interferers"]]
    return out


def _validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{path}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs))


def resolve_config(cfg: dict, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Validate a config dict, fill defaults and build the scene."""
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg["seed"] = seed
    _validate(cfg)
    raw = _with_defaults(cfg)
    if raw["P"] > raw["n_positions"]:
        raise ConfigError(f"P: {raw['P']} exceeds n_positions {raw['n_positions']}")
    try:
        geometry = ArrayGeometry(
            raw["n_positions"], None if raw["positions"] is None else tuple(raw["positions"])
        )
        band = Band(raw["carrier"], raw["bandwidth"], raw["bin_count"])
        scenario = Scenario(
            geometry=geometry,
            band=band,
            desired=SourceSpec(raw["desired"]["doa_deg"], raw["desired"]["power_db"], "desired"),
            interferers=tuple(SourceSpec(j["doa_deg"], j["power_db"]) for j in raw["interferers"]),
            noise_power=10.0 ** (raw["noise_power_db"] / 10.0),
        )
        settings = SdrSettings(**raw["settings"])
    except (ScenarioError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(raw, scenario, settings)


def parse_config(path, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Read, validate and resolve a JSON config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    return resolve_config(cfg, overrides, seed)


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _bin_correlations(cfg: RunConfig):
    T = cfg.raw["snapshots"]
    if T is None:
        return analytic_bin_correlations(cfg.scenario)
    X = synthesize_snapshots(cfg.scenario, T, seed=cfg.raw["seed"])
    return estimate_bin_correlations(X, cfg.scenario)


def _design_record(result: DesignResult, bc, cfg: RunConfig) -> dict:
    rec = result.to_dict()
    rec["report"] = ev.sinr_report(result, bc, cfg.scenario).to_dict()
    return rec


def _tdl_record(result: DesignResult) -> dict:
    rec = result.to_dict()
    w = result.weights
    rec["weights"] = [
        {"sensor": int(s), "tap": int(t), "re": float(w[i, t].real), "im": float(w[i, t].imag)}
        for i, s in enumerate(result.mask.indices)
        for t in range(w.shape[1])
    ]
    return rec


def _enum_record(res) -> dict:
    return {
        "objective": res.objective,
        "mask": res.mask.indices,
        "mask_bits": res.mask.bitstring(),
        "sinr_db": res.evaluation.sinr_db,
        "gamma_db": res.evaluation.gamma_db,
        "visited_count": res.visited_count,
    }


def execute(cfg: RunConfig, command: str, workdir: Path, threads: int = 1) -> List[str]:
    """Run ``command`` and write its artifacts into ``workdir``; returns file names."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    files: Dict[str, str] = {}
    P, sc, settings = cfg.P, cfg.scenario, cfg.settings
    budget = cfg.raw["enumeration_budget"]

    if command == "design":
        bc = _bin_correlations(cfg)
        res = design(bc, P, settings)
        files["design.json"] = _dump(_design_record(res, bc, cfg))
    elif command == "enumerate":
        bc = _bin_correlations(cfg)
        keep = sc.n_positions <= FULL_DUMP_MAX_N
        best = exhaustive_search(bc, P, "best", budget, threads, keep_all=keep)
        worst = exhaustive_search(bc, P, "worst", budget, threads)
        files["enumerate.json"] = _dump(
            {"best": _enum_record(best), "worst": _enum_record(worst), "visited_count": best.visited_count}
        )
        if keep:
            path = workdir / "subsets.csv"
            write_search_csv(best, sc.n_positions, path)
            files["subsets.csv"] = None
    elif command == "tdl-design":
        res = tdl_design(sc, P, settings, max_real_dim=cfg.raw["tdl_max_real_dim"])
        files["tdl_design.json"] = _dump(_tdl_record(res))
    elif command == "tdl-enumerate":
        st = build_stacked_correlations(sc)
        best = tdl_exhaustive(st, P, "best", budget)
        worst = tdl_exhaustive(st, P, "worst", budget)
        rec = {"best": {"mask": best.mask.indices, "sinr_db": best.evaluation.sinr_db},
               "worst": {"mask": worst.mask.indices, "sinr_db": worst.evaluation.sinr_db},
               "visited_count": best.visited_count}
        files["tdl_enumerate.json"] = _dump(rec)
    elif command == "beampattern":
        bc = _bin_correlations(cfg)
        res = design(bc, P, settings)
        grid = ev.beampattern(res.weights, res.mask, sc, ev.default_theta_grid(cfg.raw["grid_step_deg"]))
        ev.write_beampattern_csv(grid, workdir / "beampattern.csv")
        files["beampattern.csv"] = None
        rec = _design_record(res, bc, cfg)
        rec["jammer_peak_gain_db"] = {
            str(j.doa_deg): float(np.max(att)) for j, att in
            zip(sc.interferers, ev.jammer_attenuation(res.weights, res.mask, sc).values())
        }
        files["beampattern.json"] = _dump(rec)
    elif command in ("sweep", "compare"):
        sw = cfg.raw["sweep"]
        n_steps = sw["n_steps"] if command == "sweep" else 0
        rows = ev.sweep(sc, sw["shift_step_deg"], n_steps, P, settings, sw["columns"],
                        threads=threads, tdl_max_real_dim=cfg.raw["tdl_max_real_dim"])
        ev.write_sweep_csv(rows, workdir / f"{command}.csv")
        files[f"{command}.csv"] = None
        files[f"{command}.json"] = _dump({"rows": [r.to_dict() for r in rows], "flags": ev.sweep_flags(rows)})

    for name, text in files.items():
        if text is not None:
            (workdir / name).write_text(text)
    return sorted(files)


def _resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return max(1, flag)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sparse-wideband",
        description="Sparse wideband array design: SDR sensor selection, enumeration and evaluation.",
    )
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path assignment into the config, e.g. settings.epsilon=0.1")
    p.add_argument("-v", "--verbose", action="store_true", help="per-iteration progress on stderr")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = parse_config(args.config, args.override, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out.parent))
    except OSError as exc:
        print(f"cannot prepare output directory {out}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    try:
        (tmp / "config.resolved.json").write_text(_dump(cfg.raw))
        names = execute(cfg, args.command, tmp, _resolve_threads(args.threads))
        out.mkdir(parents=True, exist_ok=True)
        for name in ["config.resolved.json", *names]:
            os.replace(tmp / name, out / name)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every computation failure maps to exit 1
        log.debug("computation failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    log.info("wrote %s", ", ".join(names))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
