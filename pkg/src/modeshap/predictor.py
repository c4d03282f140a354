"""Mode-guided sliding-window forecasting.

The series is split chronologically into training, validation and test
slices. Time is cut into sub-horizons of ``horizon`` samples. At the start of
every sub-horizon, and every ``mode_refresh_interval`` samples after it, the
last ``decomposition_window`` samples are decomposed into modes. Between
refreshes each mode is carried forward as a sinusoid anchored on its
analytic amplitude and phase a few samples before the window end, so features
only ever use samples observed before the prediction time.

Modes found at different refreshes are matched to a fixed set of slots, one
per mode of the decomposition at the end of the training slice, by
minimum-cost assignment on centre frequency. A ridge model maps the last
``L`` raw samples plus the last ``L`` samples of each selected slot to the
next ``W`` samples.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import linear_sum_assignment

from .dmd import DmdConfig, decompose
from .errors import ConfigError, ParameterError, StructuralError, WindowingError
from .metrics import accuracy, psnr, timing_stats
from .smv import FunctionOracle, ShapleyReport, shapley

log = logging.getLogger(__name__)

CHANNELS = ("pos_x", "pos_y", "pos_z", "vel_x", "vel_y", "vel_z", "force_x", "force_y", "force_z")
SIDES = ("H", "R")
KINDS = ("baseline_raw", "dmd_all_modes", "dmd_smv_topk")
WINDOW_SIZES = (1, 5, 10, 25, 50, 100)
REFRESH_INTERVALS = (100, 90, 40)
LAMBDA_FLOOR = 1e-8
TIMING_WARMUP = 100


@dataclass(frozen=True)
class ChannelBundle:
    """Nine aligned channels recorded on one side of the link."""

    side: str
    channels: Dict[str, np.ndarray]
    sample_rate_hz: float = 1000.0

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ParameterError(f"side must be one of {SIDES}, got {self.side!r}")
        if set(self.channels) != set(CHANNELS):
            raise StructuralError(f"bundle needs channels {CHANNELS}")
        data = {}
        lengths = set()
        for name in CHANNELS:
            a = np.array(self.channels[name], dtype=float, copy=True).ravel()
            a.setflags(write=False)
            data[name] = a
            lengths.add(a.size)
        if len(lengths) != 1:
            raise StructuralError("all channels must have equal length")
        object.__setattr__(self, "channels", data)

    def __len__(self) -> int:
        return self.channels[CHANNELS[0]].size

    @classmethod
    def replicate(cls, side: str, samples: np.ndarray, sample_rate_hz: float = 1000.0) -> "ChannelBundle":
        return cls(side, {c: samples for c in CHANNELS}, sample_rate_hz)


@dataclass(frozen=True)
class Split:
    """Chronological train / validation / test fractions."""

    train: float = 0.7
    validation: float = 0.1
    test: float = 0.2

    def __post_init__(self) -> None:
        parts = (self.train, self.validation, self.test)
        if min(parts) <= 0 or abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be positive and sum to 1")

    def bounds(self, n: int) -> Tuple[int, int]:
        """End of the training slice and end of the validation slice."""
        a = int(round(self.train * n))
        b = int(round((self.train + self.validation) * n))
        return a, b


@dataclass(frozen=True)
class PredictorSpec:
    """Forecasting configuration.

    ``ridge_lambda`` is relative: the penalty is ``ridge_lambda * n * s2 * ||c||^2``
    where ``n`` is the number of training rows and ``s2`` the mean square of
    the centred training slice, so it does not depend on signal units.
    ``top_k=None`` keeps the smallest set of modes holding 95% of the positive
    Shapley mass.
    """

    kind: str = "dmd_smv_topk"
    lag_order: int = 32
    window_size: int = 5
    horizon: int = 100
    mode_refresh_interval: int = 100
    ridge_lambda: float = 1e-3
    decomposition_window: int = 1024
    anchor_guard: int = 16
    top_k: Optional[int] = None
    shapley_method: str = "auto"
    exact_max_modes: int = 8
    shapley_seed: int = 0
    eps3: Union[float, str] = "auto"
    permutation_cap: int = 50_000
    bootstrap_rounds: int = 20
    slot_gate: float = 0.3
    validation_stride: int = 1
    channels: Tuple[str, ...] = CHANNELS

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.lag_order < 1 or self.horizon < 1 or self.window_size < 1:
            raise ConfigError("lag_order, horizon and window_size must be positive")
        if self.horizon % self.window_size:
            raise ConfigError(f"window size {self.window_size} does not divide horizon {self.horizon}")
        if not 1 <= self.mode_refresh_interval <= self.horizon:
            raise ConfigError("mode_refresh_interval must lie in [1, horizon]")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be non-negative")
        if not 0 <= self.anchor_guard < self.decomposition_window - 1:
            raise ConfigError("anchor_guard must be smaller than the decomposition window")
        if self.decomposition_window < max(self.lag_order, 8):
            raise ConfigError("decomposition_window must cover the lag order")
        if self.slot_gate < 0:
            raise ConfigError("slot_gate must be non-negative")
        if self.validation_stride < 1:
            raise ConfigError("validation_stride must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError("top_k must be positive")
        bad = [c for c in self.channels if c not in CHANNELS]
        if bad or not self.channels:
            raise ConfigError(f"unknown channels {bad}")
        object.__setattr__(self, "channels", tuple(self.channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass(frozen=True)
class ForecastModel:
    """Linear map from a feature vector to ``W`` future samples (centred units)."""

    coefficients: np.ndarray
    lag_order: int
    mode_count: int
    offset: float
    fit_rmse: float
    n_samples: int
    ridge_lambda: float

    @property
    def input_dim(self) -> int:
        return self.coefficients.shape[0]

    @property
    def window_size(self) -> int:
        return self.coefficients.shape[1]


def build_features(history, modes: Sequence = (), lag: int = 32) -> np.ndarray:
    """Last ``lag`` raw samples followed by the last ``lag`` samples of each mode.

    ``modes`` are sequences time-aligned with ``history`` (their last sample is
    at the same time as the last history sample).
    """
    h = np.asarray(history, dtype=float).ravel()
    if lag < 1 or h.size < lag:
        raise WindowingError(f"need at least {lag} history samples, got {h.size}")
    parts = [h[-lag:]]
    for m in modes:
        m = np.asarray(m, dtype=float).ravel()
        if m.size < lag:
            raise WindowingError(f"mode history shorter than lag {lag}")
        parts.append(m[-lag:])
    return np.concatenate(parts)


def solve_ridge(F: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Minimizer of ``||Y - F c||^2 + lam ||c||^2`` (``lam`` floored at 1e-8 when rank deficient)."""
    d = F.shape[1]
    G = F.T @ F
    if lam <= 0 and np.linalg.matrix_rank(G) < d:
        log.info("rank-deficient design with zero ridge penalty; using %g", LAMBDA_FLOOR)
        lam = LAMBDA_FLOOR
    return np.linalg.solve(G + lam * np.eye(d), F.T @ Y)


def fit(features: np.ndarray, targets: np.ndarray, ridge_lambda: float = 1e-3, lag_order: int = 32,
        offset: float = 0.0, scale: Optional[float] = None) -> ForecastModel:
    """Fit a ridge forecaster on a design matrix.

    The penalty is ``ridge_lambda * n * scale`` where ``scale`` defaults to the
    mean square of the targets.
    """
    F = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if F.ndim != 2 or F.shape[0] != Y.shape[0] or F.shape[0] == 0:
        raise StructuralError("features and targets must have matching non-empty rows")
    if F.shape[1] % lag_order:
        raise StructuralError("feature width must be a multiple of the lag order")
    n = F.shape[0]
    s2 = float(np.mean(Y ** 2)) if scale is None else float(scale)
    lam = ridge_lambda * n * s2
    c = solve_ridge(F, Y, lam)
    if not np.all(np.isfinite(c)):
        raise StructuralError("ridge fit produced non-finite coefficients")
    err = float(np.sqrt(np.mean((F @ c - Y) ** 2)))
    return ForecastModel(c, lag_order, F.shape[1] // lag_order - 1, float(offset), err, n, lam)


def predict_window(model: ForecastModel, features: np.ndarray) -> np.ndarray:
    """``features @ coefficients``: the next ``W`` samples in centred units (no intercept)."""
    f = np.asarray(features, dtype=float)
    if f.shape[-1] != model.input_dim:
        raise StructuralError(f"feature length {f.shape[-1]} != model input {model.input_dim}")
    return f @ model.coefficients


# ----------------------------------------------------------------------------
# causal mode tracks


@dataclass(frozen=True)
class TrackedMode:
    samples: np.ndarray
    center_freq: float
    amplitude: float
    phase: float


@dataclass
class Refresh:
    start: int
    modes: List[TrackedMode]
    converged: bool


def _anchor(samples: np.ndarray, at: int) -> Tuple[float, float]:
    n = samples.size
    X = np.fft.fft(samples)
    h = np.zeros(n)
    h[0] = 1.0
    h[1:(n + 1) // 2] = 2.0
    if n % 2 == 0:
        h[n // 2] = 1.0
    a = np.fft.ifft(X * h)[at]
    return float(abs(a)), float(np.angle(a))


def decompose_window(window: np.ndarray, dmd_config: DmdConfig, guard: int) -> Refresh:
    """Decompose one history window and record each mode's anchor."""
    res = decompose(window, dmd_config)
    at = window.size - 1 - guard
    modes = []
    for m in res.modes:
        amp, ph = _anchor(m.samples, at)
        modes.append(TrackedMode(m.samples, m.center_freq, amp, ph))
    return Refresh(0, modes, res.converged)


def match_slots(reference: np.ndarray, found: np.ndarray, gate: Optional[float] = None,
                slack: float = 0.0) -> Dict[int, int]:
    """Assign found modes to reference slots minimizing total ``|delta omega|``.

    With a ``gate``, a pair is kept only if ``|delta omega| <= gate * omega_ref + slack``;
    slots left without a mode are absent from the result.
    """
    if reference.size == 0 or found.size == 0:
        return {}
    cost = np.abs(reference[:, None] - found[None, :])
    rows, cols = linear_sum_assignment(cost)
    out = {}
    for r, c in zip(rows, cols):
        if gate is None or cost[r, c] <= gate * reference[r] + slack:
            out[int(r)] = int(c)
    return out


class ChannelContext:
    """Cached causal features of one centred channel for a fixed refresh schedule.

    Building the context runs every scheduled decomposition once. Row ``t``
    of :attr:`features` is the feature vector for predicting ``x[t:t+W]``
    using all slots; it depends on ``x[:t]`` only, apart from the training
    mean used for centring and the slot reference, which come from the
    training slice.
    """

    def __init__(self, x: np.ndarray, spec: PredictorSpec, dmd_config: DmdConfig, split: Split):
        self.x = np.asarray(x, dtype=float)
        self.spec = spec
        self.dmd_config = dmd_config
        self.split = split
        T = self.x.size
        self.train_end, self.val_end = split.bounds(T)
        H, win, L = spec.horizon, spec.decomposition_window, spec.lag_order
        if self.train_end < win + H + L:
            raise ConfigError("training slice too short for the decomposition window and horizon")
        self.mean = float(self.x[: self.train_end].mean())
        self.xc = self.x - self.mean
        self.scale = float(np.mean(self.xc[: self.train_end] ** 2))
        self.first_block = int(math.ceil(win / H)) * H
        self.blocks = list(range(self.first_block, T - H + 1, H))
        ref = decompose(self.xc[self.train_end - win: self.train_end], dmd_config)
        self.reference = np.array([m.center_freq for m in ref.modes])
        self.mode_count = self.reference.size
        self.refreshes: Dict[int, Refresh] = {}
        self.degraded_blocks: List[int] = []
        I = spec.mode_refresh_interval
        for b in self.blocks:
            ok = True
            for o in range(0, H, I):
                r = b + o
                rf = decompose_window(self.xc[r - win: r], dmd_config, spec.anchor_guard)
                rf.start = r
                self.refreshes[r] = rf
                ok &= rf.converged
            if not ok:
                self.degraded_blocks.append(b)
        self.features = np.full((T, L * (1 + self.mode_count)), np.nan)
        for b in self.blocks:
            for o in range(0, H, I):
                r = b + o
                stop = min(r + I, b + H, T)
                self._fill(r, stop)

    def refresh_for(self, t: int) -> int:
        H, I = self.spec.horizon, self.spec.mode_refresh_interval
        b = (t // H) * H
        return b + ((t - b) // I) * I

    def _slot_series(self, r: int, stop: int) -> np.ndarray:
        win, guard = self.spec.decomposition_window, self.spec.anchor_guard
        rf = self.refreshes[r]
        span = stop - (r - win)
        out = np.zeros((self.mode_count, span))
        found = np.array([m.center_freq for m in rf.modes])
        at = win - 1 - guard
        idx = np.arange(at, span)
        slack = 4.0 * np.pi / win
        for slot, j in match_slots(self.reference, found, self.spec.slot_gate, slack).items():
            m = rf.modes[j]
            out[slot, :at] = m.samples[:at]
            out[slot, at:] = m.amplitude * np.cos(m.phase + m.center_freq * (idx - at))
        return out

    def _fill(self, r: int, stop: int) -> None:
        L, win = self.spec.lag_order, self.spec.decomposition_window
        series = self._slot_series(r, stop)
        base = r - win
        raw = sliding_window_view(self.xc, L)
        for t in range(r, stop):
            row = [raw[t - L]]
            row.extend(series[:, t - L - base: t - base])
            self.features[t] = np.concatenate(row) if len(row) > 1 else row[0]

    def columns(self, slots: Sequence[int]) -> np.ndarray:
        """Feature columns for the raw lags plus the given 0-based slots."""
        L = self.spec.lag_order
        cols = list(range(L))
        for s in sorted(slots):
            cols.extend(range(L * (1 + s), L * (2 + s)))
        return np.array(cols, dtype=int)

    def training_rows(self, W: int) -> np.ndarray:
        return np.arange(self.first_block, self.train_end - W + 1)

    def slide_starts(self, lo: int, hi: int, W: int) -> List[Tuple[int, int, int]]:
        """``(block, slide, t)`` for every slide of every block fully inside ``[lo, hi)``."""
        H = self.spec.horizon
        out = []
        for b in self.blocks:
            if b >= lo and b + H <= hi:
                out.extend((b, i, b + i * W) for i in range(H // W))
        return out

    def fit_slots(self, slots: Sequence[int], W: int) -> ForecastModel:
        rows = self.training_rows(W)
        F = self.features[np.ix_(rows, self.columns(slots))]
        Y = sliding_window_view(self.xc, W)[rows]
        return fit(F, Y, self.spec.ridge_lambda, self.spec.lag_order, self.mean, self.scale)

    def features_at(self, t: int, slots: Sequence[int]) -> np.ndarray:
        return self.features[t, self.columns(slots)]

    def slide_scores(self, model: ForecastModel, slots: Sequence[int], starts) -> np.ndarray:
        W = model.window_size
        cols = self.columns(slots)
        out = np.empty(len(starts))
        for n, (_, _, t) in enumerate(starts):
            pred = self.features[t, cols] @ model.coefficients + model.offset
            out[n] = accuracy(pred, self.x[t: t + W])
        return out

    def validation_starts(self, W: int) -> List[Tuple[int, int, int]]:
        """Forecast origins in the validation slice, every ``validation_stride`` samples."""
        lo = max(self.train_end, self.first_block)
        hi = min(self.val_end, self.blocks[-1] + self.spec.horizon if self.blocks else 0)
        return [(t, 0, t) for t in range(lo, hi - W + 1, self.spec.validation_stride)]

    def oracle(self, W: int) -> FunctionOracle:
        """Validation-slice oracle over 1-based slot indices."""
        starts = self.validation_starts(W)
        if not starts:
            raise ConfigError("validation slice holds no complete sub-horizon")
        full = list(range(self.mode_count))

        def value(subset) -> float:
            slots = [k - 1 for k in subset]
            return float(self.slide_scores(self.fit_slots(slots, W), slots, starts).mean())

        def bootstrap(rounds: int, seed: int) -> List[float]:
            scores = self.slide_scores(self.fit_slots(full, W), full, starts)
            rng = np.random.default_rng([int(seed), 0x5EED])
            return [float(scores[rng.integers(0, scores.size, scores.size)].mean()) for _ in range(rounds)]

        return FunctionOracle(value, bootstrap)


def smv_oracle_from_predictor(context: ChannelContext, window_size: int) -> FunctionOracle:
    """Performance oracle scoring slot subsets on the validation slice."""
    return context.oracle(window_size)


# ----------------------------------------------------------------------------
# experiment runs


@dataclass
class ChannelRun:
    channel: str
    mode_count: int
    slots_used: List[int]
    model: ForecastModel
    shapley: Optional[ShapleyReport]
    records: List[dict]
    durations: List[float]
    degraded_blocks: List[int]


@dataclass
class ExperimentRun:
    spec: PredictorSpec
    side: str
    channels: List[ChannelRun]
    per_slide_accuracy: List[float] = field(default_factory=list)
    per_slide_psnr: List[float] = field(default_factory=list)
    mean_accuracy: float = float("nan")
    mean_psnr: float = float("nan")
    inference_time_stats: Dict[str, float] = field(default_factory=dict)
    mode_count_used: int = 0

    @property
    def records(self) -> List[dict]:
        return [r for c in self.channels for r in c.records]

    def last_fraction_accuracy(self, fraction: float = 0.2) -> float:
        """Mean accuracy over slides starting in the last ``fraction`` of each sub-horizon."""
        H, W = self.spec.horizon, self.spec.window_size
        cut = H * (1.0 - fraction)
        vals = [r["accuracy_pct"] for r in self.records if r["slide_index"] * W >= cut - 1e-9]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "schema_version": 1,
            "side": self.side,
            "spec": self.spec.to_dict(),
            "mean_accuracy": self.mean_accuracy,
            "mean_psnr": self.mean_psnr,
            "mode_count_used": self.mode_count_used,
            "per_slide_accuracy": self.per_slide_accuracy,
            "per_slide_psnr": self.per_slide_psnr,
            "channels": [
                {
                    "channel": c.channel,
                    "mode_count": c.mode_count,
                    "slots_used": [s + 1 for s in c.slots_used],
                    "shapley": c.shapley.to_dict() if c.shapley else None,
                    "degraded_sub_horizons": c.degraded_blocks,
                    "fit_rmse": c.model.fit_rmse,
                }
                for c in self.channels
            ],
        }
        if include_timing:
            d["timing"] = {"inference_seconds": self.inference_time_stats}
        return d


def select_slots(ctx: ChannelContext, spec: PredictorSpec, W: int) -> Tuple[List[int], Optional[ShapleyReport]]:
    """Slots used by a predictor kind; for ``dmd_smv_topk`` also the Shapley report."""
    if spec.kind == "baseline_raw" or ctx.mode_count == 0:
        return [], None
    if spec.kind == "dmd_all_modes":
        return list(range(ctx.mode_count)), None
    k = None if spec.top_k is None else min(spec.top_k, ctx.mode_count)
    kwargs = {"k": k}
    if spec.shapley_method != "exact" and not (spec.shapley_method == "auto" and ctx.mode_count <= spec.exact_max_modes):
        kwargs.update(seed=spec.shapley_seed, eps3=spec.eps3, permutation_cap=spec.permutation_cap,
                      bootstrap_rounds=spec.bootstrap_rounds)
    report = shapley(ctx.mode_count, ctx.oracle(W), method=spec.shapley_method,
                     exact_max_modes=spec.exact_max_modes, **kwargs)
    return sorted(k - 1 for k in report.top_k), report


def run_channel(ctx: ChannelContext, spec: PredictorSpec, channel: str, timing: bool = True) -> ChannelRun:
    W = spec.window_size
    slots, report = select_slots(ctx, spec, W)
    model = ctx.fit_slots(slots, W)
    cols = ctx.columns(slots)
    starts = ctx.slide_starts(ctx.val_end, ctx.x.size, W)
    if not starts:
        raise ConfigError("test slice holds no complete sub-horizon")
    block_index = {b: n for n, b in enumerate(sorted({b for b, _, _ in starts}))}
    if timing:
        f0 = ctx.features[starts[0][2], cols]
        for _ in range(TIMING_WARMUP):
            predict_window(model, f0)
    records, durations = [], []
    clock = time.perf_counter
    for b, i, t in starts:
        f = ctx.features[t, cols]
        t0 = clock()
        yhat = predict_window(model, f)
        dt = clock() - t0
        pred = yhat + model.offset
        truth = ctx.x[t: t + W]
        durations.append(dt)
        records.append({
            "sub_horizon": block_index[b],
            "slide_index": i,
            "channel": channel,
            "accuracy_pct": accuracy(pred, truth),
            "psnr_db": psnr(pred, truth),
            "inference_seconds": dt,
        })
    degraded = [block_index[b] for b in ctx.degraded_blocks if b in block_index]
    return ChannelRun(channel, ctx.mode_count, slots, model, report, records, durations, degraded)


def _context_key(spec: PredictorSpec) -> tuple:
    return (spec.lag_order, spec.horizon, spec.mode_refresh_interval, spec.decomposition_window,
            spec.anchor_guard)


def build_contexts(bundle: ChannelBundle, spec: PredictorSpec, dmd_config: DmdConfig = DmdConfig(),
                   split: Split = Split()) -> Dict[str, ChannelContext]:
    return {c: ChannelContext(bundle.channels[c], spec, dmd_config, split) for c in spec.channels}


def assemble(spec: PredictorSpec, side: str, runs: List[ChannelRun]) -> ExperimentRun:
    acc = [r["accuracy_pct"] for c in runs for r in c.records]
    ps = [r["psnr_db"] for c in runs for r in c.records]
    dur = [d for c in runs for d in c.durations]
    return ExperimentRun(spec, side, runs, acc, ps, float(np.mean(acc)), float(np.mean(ps)),
                         timing_stats(dur), int(round(np.mean([len(c.slots_used) for c in runs]))))


def run_horizon(bundle: ChannelBundle, spec: PredictorSpec, dmd_config: DmdConfig = DmdConfig(),
                split: Split = Split(), contexts: Optional[Dict[str, ChannelContext]] = None) -> ExperimentRun:
    """Run the sliding-window protocol on every requested channel of a bundle.

    Pass ``contexts`` from :func:`build_contexts` to reuse decompositions
    across runs that share the lag order, horizon and refresh schedule.
    """
    if contexts is None:
        contexts = build_contexts(bundle, spec, dmd_config, split)
    runs = []
    for c in spec.channels:
        ctx = contexts[c]
        if _context_key(ctx.spec) != _context_key(spec):
            raise ConfigError("context was built for a different schedule")
        runs.append(run_channel(ctx, spec, c))
    return assemble(spec, bundle.side, runs)


def run_sweep(bundle: ChannelBundle, spec: PredictorSpec, window_sizes: Sequence[int] = WINDOW_SIZES,
              kinds: Sequence[str] = KINDS, dmd_config: DmdConfig = DmdConfig(),
              split: Split = Split()) -> Dict[Tuple[str, int], ExperimentRun]:
    """All ``(kind, W)`` runs sharing one set of channel contexts."""
    contexts = build_contexts(bundle, spec, dmd_config, split)
    out = {}
    for kind in kinds:
        for W in window_sizes:
            s = replace(spec, kind=kind, window_size=int(W))
            out[(kind, int(W))] = run_horizon(bundle, s, dmd_config, split, contexts)
    return out
