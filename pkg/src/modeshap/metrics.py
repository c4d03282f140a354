"""Forecast scoring: range-normalized accuracy, PSNR and timing statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .errors import StructuralError

PSNR_CAP_DB = 120.0
_DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True)
class WindowScore:
    accuracy_pct: float
    psnr_db: float
    rmse: float
    n_samples: int


def _pair(predicted, truth) -> tuple:
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size != t.size:
        raise StructuralError(f"length mismatch: {p.size} predicted vs {t.size} truth")
    if t.size < 1:
        raise StructuralError("empty window")
    return p, t


def _peak(t: np.ndarray) -> float:
    """Window range, or ``|mean| + 1e-12`` for a flat window."""
    r = float(np.ptp(t))
    return r if r >= _DEGENERATE_RANGE else abs(float(t.mean())) + _DEGENERATE_RANGE


def rmse(predicted, truth) -> float:
    p, t = _pair(predicted, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def accuracy(predicted, truth) -> float:
    """``100 * max(0, 1 - RMSE / range(truth))`` in percent."""
    p, t = _pair(predicted, truth)
    e = float(np.sqrt(np.mean((p - t) ** 2)))
    return 100.0 * max(0.0, 1.0 - e / _peak(t))


def psnr(predicted, truth) -> float:
    """``20 log10(range(truth) / RMSE)``, capped at 120 dB."""
    p, t = _pair(predicted, truth)
    e = float(np.sqrt(np.mean((p - t) ** 2)))
    peak = _peak(t)
    if e < peak * 1e-6:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * math.log10(peak / e))


def score_window(predicted, truth) -> WindowScore:
    p, t = _pair(predicted, truth)
    return WindowScore(accuracy(p, t), psnr(p, t), rmse(p, t), int(t.size))


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * n)``-th smallest value."""
    n = sorted_values.size
    rank = max(1, int(math.ceil(q / 100.0 * n - 1e-9)))
    return float(sorted_values[min(rank, n) - 1])


def timing_stats(durations: Sequence[float]) -> Dict[str, float]:
    """Mean, p50 and p95 (nearest rank) of a list of durations."""
    d = np.sort(np.asarray(durations, dtype=float).ravel())
    if d.size == 0:
        raise StructuralError("timing_stats needs at least one duration")
    return {"mean": float(d.mean()), "p50": nearest_rank(d, 50), "p95": nearest_rank(d, 95)}
