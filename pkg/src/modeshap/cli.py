"""Command-line entry point.

``modeshap <decompose|shapley|predict|bench> --config CONFIG [--seeds N] [--workers N] [--out DIR]``

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Errors are also reported as one JSON object on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config as cfgmod
from .dmd import decompose
from .errors import ConfigError, ModeshapError
from .io import ingest_csv, write_csv_atomic, write_json_atomic
from .predictor import (
    KINDS,
    ChannelBundle,
    ExperimentRun,
    build_contexts,
    run_horizon,
)
from .smv import shapley
from .synth import AM_FM_BANDS, SynthSpec, am_fm_bundle, synth

COMMANDS = ("decompose", "shapley", "predict", "bench")
SCHEMA_VERSION = 1
SLIDE_COLUMNS = ("sub_horizon", "slide_index", "channel", "accuracy_pct", "psnr_db", "inference_seconds")
PLOT_COLUMNS = ("method", "side", "W", "value", "stddev")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("modeshap")


def _configure_logging() -> None:
    level = os.environ.get("MODESHAP_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def load_bundles(cfg: dict, repetition: int) -> Dict[str, ChannelBundle]:
    """Input bundles per side. Synthetic inputs shift their seed by the repetition index."""
    inp = cfg["input"]
    if "csv" in inp:
        h, r = ingest_csv(inp["csv"])
        found = {"H": h, "R": r}
        missing = [s for s in cfg["sides"] if found[s] is None]
        if missing:
            raise ConfigError(f"input file has no rows for sides {missing}")
        return {s: found[s] for s in cfg["sides"]}
    syn = dict(inp["synthetic"])
    kind = syn.pop("kind")
    out = {}
    for side in cfg["sides"]:
        if kind == "am_fm":
            bands = syn["bands"] if syn["bands"] is not None else AM_FM_BANDS
            out[side] = am_fm_bundle(
                int(syn["n"]), int(syn["seed"]) + repetition, side,
                bands=[tuple(b) for b in bands], snr_db=float(syn["snr_db"]), drift=float(syn["drift"]),
                offset=float(syn["offset"]), nuisance_bands=[tuple(b) for b in syn["nuisance_bands"]],
                nuisance_power=float(syn["nuisance_power"]),
                nuisance_bandwidth=float(syn["nuisance_bandwidth"]))
        else:
            spec = SynthSpec.from_dict({**syn, "seed": int(syn["seed"]) + repetition, "side": side})
            out[side] = synth(spec)
    return out


def _artifact(cfg: dict, command: str, repetition: int, side: str, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "repetition": repetition,
            "side": side, "config": cfg, **body}


def task_decompose(cfg: dict, repetition: int) -> List[Tuple[str, dict]]:
    dmd = cfgmod.dmd_config(cfg)
    out = []
    for side, bundle in load_bundles(cfg, repetition).items():
        for ch in cfg["predict"]["channels"]:
            res = decompose(bundle.channels[ch], dmd)
            body = {"channel": ch, **res.to_dict(),
                    "center_freqs": [m.center_freq for m in res.modes],
                    "noise_variance": res.noise_variance}
            out.append((f"decompose_{side}_{ch}.json", _artifact(cfg, "decompose", repetition, side, body)))
    return out


def task_shapley(cfg: dict, repetition: int) -> List[Tuple[str, dict]]:
    W = int(cfg["smv"]["window_size"])
    spec = cfgmod.predictor_spec(cfg, "dmd_smv_topk", W, repetition)
    out = []
    for side, bundle in load_bundles(cfg, repetition).items():
        contexts = build_contexts(bundle, spec, cfgmod.dmd_config(cfg), cfgmod.split_of(cfg))
        for ch, ctx in contexts.items():
            kwargs = {"k": None if spec.top_k is None else min(spec.top_k, ctx.mode_count)}
            if spec.shapley_method != "exact" and not (
                    spec.shapley_method == "auto" and ctx.mode_count <= spec.exact_max_modes):
                kwargs.update(seed=spec.shapley_seed, eps3=spec.eps3, permutation_cap=spec.permutation_cap,
                              bootstrap_rounds=spec.bootstrap_rounds)
            rep = shapley(ctx.mode_count, ctx.oracle(W), method=spec.shapley_method,
                          exact_max_modes=spec.exact_max_modes, **kwargs)
            body = {"channel": ch, "window_size": W, **rep.to_dict(),
                    "center_freqs": ctx.reference.tolist(), "oracle_calls": rep.oracle_calls,
                    "v_empty": rep.v_empty, "v_full": rep.v_full}
            out.append((f"shapley_{side}_{ch}.json", _artifact(cfg, "shapley", repetition, side, body)))
    return out


def _sweep(cfg: dict, repetition: int, kinds: Sequence[str]) -> List[Tuple[str, int, str, ExperimentRun]]:
    sizes = [int(w) for w in cfg["predict"]["window_sizes"]]
    base = cfgmod.predictor_spec(cfg, kinds[0], sizes[0], repetition)
    dmd, split = cfgmod.dmd_config(cfg), cfgmod.split_of(cfg)
    runs = []
    for side, bundle in load_bundles(cfg, repetition).items():
        contexts = build_contexts(bundle, base, dmd, split)
        for kind in kinds:
            for W in sizes:
                spec = replace(base, kind=kind, window_size=W)
                runs.append((side, W, kind, run_horizon(bundle, spec, dmd, split, contexts)))
    return runs


def task_predict(cfg: dict, repetition: int) -> List[Tuple[str, object]]:
    out: List[Tuple[str, object]] = []
    for side, W, kind, run in _sweep(cfg, repetition, cfg["predict"]["kinds"]):
        stem = f"predict_{side}_{kind}_W{W}"
        body = run.to_dict()
        body.pop("schema_version")
        out.append((stem + ".json", _artifact(cfg, "predict", repetition, side, body)))
        rows = [[r[c] for c in SLIDE_COLUMNS] for r in run.records]
        out.append((stem + ".csv", (SLIDE_COLUMNS, rows)))
        out.append(("__run__", (side, kind, W, _summary(run))))
    return out


def task_bench(cfg: dict, repetition: int) -> List[Tuple[str, object]]:
    out: List[Tuple[str, object]] = []
    table = []
    for side, W, kind, run in _sweep(cfg, repetition, KINDS):
        table.append({"side": side, "method": kind, "W": W, "mean_accuracy": run.mean_accuracy,
                      "mode_count_used": run.mode_count_used,
                      "feature_dim": int(np.mean([c.model.input_dim for c in run.channels])),
                      "timing": {"inference_seconds": run.inference_time_stats}})
        out.append(("__run__", (side, kind, W, _summary(run))))
    out.append(("bench.json", _artifact(cfg, "bench", repetition, "all", {"rows": table})))
    return out


def _summary(run: ExperimentRun) -> dict:
    W, H = run.spec.window_size, run.spec.horizon
    per_slide = [float(np.mean([r["accuracy_pct"] for r in run.records if r["slide_index"] == i]))
                 for i in range(H // W)]
    return {"accuracy": run.mean_accuracy, "psnr": run.mean_psnr,
            "time": run.inference_time_stats["mean"], "per_slide": per_slide}


TASKS = {"decompose": task_decompose, "shapley": task_shapley, "predict": task_predict, "bench": task_bench}


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def emit_plot_data(runs: Sequence, out_dir) -> List[Path]:
    """Tidy CSVs for accuracy/PSNR/time versus W and accuracy versus slide.

    ``runs`` holds :class:`ExperimentRun` objects or ``(repetition, side,
    method, W, summary)`` tuples. Runs sharing method, side and W are
    repetitions: ``value`` is their mean and ``stddev`` the sample standard
    deviation (0 for a single run).
    """
    if not runs:
        raise ConfigError("no runs to summarize")
    out_dir = Path(out_dir)
    groups: Dict[Tuple[str, str, int], List[dict]] = {}
    for item in runs:
        if isinstance(item, ExperimentRun):
            item = (0, item.side, item.spec.kind, item.spec.window_size, _summary(item))
        _, side, method, W, s = item
        groups.setdefault((method, side, W), []).append(s)
    keys = sorted(groups, key=lambda k: (KINDS.index(k[0]) if k[0] in KINDS else 99, k[1], k[2]))
    written = []
    for name, field in (("accuracy_vs_W", "accuracy"), ("psnr_vs_W", "psnr"), ("time_vs_W", "time")):
        rows = [[m, side, W, float(np.mean([g[field] for g in groups[(m, side, W)]])),
                 _std([g[field] for g in groups[(m, side, W)]])] for m, side, W in keys]
        path = out_dir / f"{name}.csv"
        write_csv_atomic(path, PLOT_COLUMNS, rows)
        written.append(path)
    sizes = sorted({k[2] for k in keys})
    W_slide = 5 if 5 in sizes else sizes[0]
    rows = []
    for m, side, W in keys:
        if W != W_slide:
            continue
        per = np.array([g["per_slide"] for g in groups[(m, side, W)]])
        for i in range(per.shape[1]):
            rows.append([m, side, i, float(per[:, i].mean()), _std(per[:, i])])
    path = out_dir / "accuracy_vs_slide.csv"
    write_csv_atomic(path, ("method", "side", "slide", "value", "stddev"), rows)
    written.append(path)
    return written


def _run_task(args: Tuple[str, dict, int]):
    command, cfg, rep = args
    return rep, TASKS[command](cfg, rep)


def run_pipeline(cfg: dict, command: str, seeds: int = 1, workers: Optional[int] = None,
                 out_dir: Optional[Path] = None) -> List[Path]:
    """Run ``command`` for ``seeds`` repetitions and write its artifacts. Returns written paths."""
    if command not in TASKS:
        raise ConfigError(f"unknown command {command!r}")
    if seeds < 1:
        raise ConfigError("--seeds must be positive")
    out_dir = Path(out_dir if out_dir is not None else cfg["output_dir"])
    jobs = [(command, cfg, rep) for rep in range(seeds)]
    n_workers = max(1, min(workers or os.cpu_count() or 1, len(jobs)))
    if n_workers == 1:
        results = [_run_task(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_task, jobs))
    written = []
    summaries = []
    for rep, items in sorted(results, key=lambda r: r[0]):
        sub = out_dir / f"seed_{rep}"
        for name, payload in items:
            if name == "__run__":
                summaries.append((rep,) + payload)
                continue
            path = sub / name
            if name.endswith(".csv"):
                header, rows = payload
                write_csv_atomic(path, header, rows)
            else:
                write_json_atomic(path, payload)
            written.append(path)
    if summaries:
        written.extend(emit_plot_data(summaries, out_dir))
    return written


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with 2 and a JSON line
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modeshap", description="Mode decomposition, Shapley mode valuation and forecasting.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seeds", type=int, default=10, help="number of repetitions (default 10)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: logical cores)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        cfg = cfgmod.load_config(args.config)
        if args.out is not None:
            cfg["output_dir"] = str(args.out)
        paths = run_pipeline(cfg, args.command, args.seeds, args.workers, Path(cfg["output_dir"]))
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except ModeshapError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    except Exception as exc:  # unexpected failures still honour the exit-code contract
        log.debug("unhandled error", exc_info=True)
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    for p in paths:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
