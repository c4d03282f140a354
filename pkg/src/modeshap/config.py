"""Run configuration: JSON document to fully defaulted settings."""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict

from .dmd import DmdConfig
from .errors import ConfigError, ModeshapError
from .predictor import CHANNELS, KINDS, SIDES, WINDOW_SIZES, PredictorSpec, Split

SMV_DEFAULTS = {
    "seed": 0,
    "eps3": "auto",
    "permutation_cap": 50_000,
    "K": None,
    "method": "auto",
    "exact_max_modes": 8,
    "bootstrap_rounds": 20,
    "window_size": 5,
}

PREDICT_DEFAULTS = {
    "kinds": ["dmd_smv_topk"],
    "window_sizes": list(WINDOW_SIZES),
    "lag_order": 32,
    "horizon": 100,
    "mode_refresh_interval": 100,
    "ridge_lambda": 1e-3,
    "decomposition_window": 1024,
    "anchor_guard": 16,
    "slot_gate": 0.3,
    "validation_stride": 1,
    "channels": list(CHANNELS),
}

SYNTH_DEFAULTS = {
    "am_fm": {"n": 5000, "seed": 0, "snr_db": 15.0, "drift": 0.0, "offset": 5.0,
              "bands": None, "nuisance_bands": [], "nuisance_power": 0.2, "nuisance_bandwidth": 0.02},
    "tones": {"tones": [], "chirp": None, "noise_sigma": 0.0, "n": 1024, "seed": 0, "vary_channels": False},
}

TOP_KEYS = {"input", "sides", "dmd", "smv", "predict", "split", "output_dir"}


def _merge(section: str, given: Any, defaults: Dict[str, Any]) -> Dict[str, Any]:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def resolve_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Fill every default and validate. The result is what artifacts embed."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    inp = raw.get("input")
    if not isinstance(inp, dict) or len(inp) != 1 or next(iter(inp)) not in ("csv", "synthetic"):
        raise ConfigError('input must be {"csv": path} or {"synthetic": {...}}')
    if "synthetic" in inp:
        syn = inp["synthetic"]
        if not isinstance(syn, dict):
            raise ConfigError("input.synthetic must be an object")
        kind = syn.get("kind", "am_fm")
        if kind not in SYNTH_DEFAULTS:
            raise ConfigError(f"unknown synthetic kind {kind!r}")
        body = {k: v for k, v in syn.items() if k != "kind"}
        resolved_input = {"synthetic": {"kind": kind, **_merge("input.synthetic", body, SYNTH_DEFAULTS[kind])}}
    else:
        if not isinstance(inp["csv"], str):
            raise ConfigError("input.csv must be a path string")
        resolved_input = {"csv": inp["csv"]}

    sides = raw.get("sides", ["H"])
    if not isinstance(sides, list) or not sides or any(s not in SIDES for s in sides):
        raise ConfigError(f"sides must be a non-empty list drawn from {SIDES}")

    dmd_defaults = {f.name: f.default for f in fields(DmdConfig)}
    dmd = _merge("dmd", raw.get("dmd"), dmd_defaults)
    smv = _merge("smv", raw.get("smv"), SMV_DEFAULTS)
    predict = _merge("predict", raw.get("predict"), PREDICT_DEFAULTS)
    split = _merge("split", raw.get("split"), {"train": 0.7, "validation": 0.1, "test": 0.2})
    if any(k not in KINDS for k in predict["kinds"]) or not predict["kinds"]:
        raise ConfigError(f"predict.kinds must be drawn from {KINDS}")
    if not predict["window_sizes"]:
        raise ConfigError("predict.window_sizes must not be empty")
    cfg = {
        "input": resolved_input,
        "sides": list(sides),
        "dmd": dmd,
        "smv": smv,
        "predict": predict,
        "split": split,
        "output_dir": str(raw.get("output_dir", "modeshap_out")),
    }
    # Construct every typed object once so invalid values fail as config errors.
    try:
        dmd_config(cfg)
        Split(**split)
        for W in predict["window_sizes"]:
            predictor_spec(cfg, predict["kinds"][0], int(W))
    except ConfigError:
        raise
    except (ModeshapError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> Dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return resolve_config(raw)


def dmd_config(cfg: Dict[str, Any]) -> DmdConfig:
    return DmdConfig(**cfg["dmd"])


def split_of(cfg: Dict[str, Any]) -> Split:
    return Split(**cfg["split"])


def predictor_spec(cfg: Dict[str, Any], kind: str, window_size: int, seed_offset: int = 0) -> PredictorSpec:
    p, s = cfg["predict"], cfg["smv"]
    return PredictorSpec(
        kind=kind,
        lag_order=int(p["lag_order"]),
        window_size=int(window_size),
        horizon=int(p["horizon"]),
        mode_refresh_interval=int(p["mode_refresh_interval"]),
        ridge_lambda=float(p["ridge_lambda"]),
        decomposition_window=int(p["decomposition_window"]),
        anchor_guard=int(p["anchor_guard"]),
        top_k=None if s["K"] is None else int(s["K"]),
        shapley_method=s["method"],
        exact_max_modes=int(s["exact_max_modes"]),
        shapley_seed=int(s["seed"]) + seed_offset,
        eps3=s["eps3"],
        permutation_cap=int(s["permutation_cap"]),
        bootstrap_rounds=int(s["bootstrap_rounds"]),
        slot_gate=float(p["slot_gate"]),
        validation_stride=int(p["validation_stride"]),
        channels=tuple(p["channels"]),
    )
