"""Shapley valuation of modes.

A performance oracle scores any subset of modes. Values are computed exactly
by subset enumeration for small mode counts, or by truncated permutation
sampling otherwise. Mode indices are 1-based throughout; ``values[k-1]``
belongs to mode ``k``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from .errors import ParameterError, SizeError

log = logging.getLogger(__name__)

EXACT_MAX_MODES = 12
DEFAULT_PERMUTATION_CAP = 50_000
CONVERGENCE_WINDOW = 100
CONVERGENCE_TOLERANCE = 0.01
_NEAR_ZERO = 1e-12

Subset = FrozenSet[int]


@dataclass(frozen=True)
class ModeEntry:
    index: int
    mode: object = None
    center_freq: float = float("nan")


@dataclass(frozen=True)
class ModeDataset:
    """The set of modes being valued, indexed ``1..Z``."""

    entries: tuple

    def __post_init__(self) -> None:
        idx = [e.index for e in self.entries]
        if sorted(idx) != list(range(1, len(idx) + 1)):
            raise ParameterError("mode indices must be unique and cover 1..Z")

    @classmethod
    def from_modes(cls, modes: Sequence) -> "ModeDataset":
        return cls(tuple(ModeEntry(i + 1, m, float(getattr(m, "center_freq", float("nan"))))
                         for i, m in enumerate(modes)))

    @classmethod
    def of_size(cls, z: int) -> "ModeDataset":
        return cls(tuple(ModeEntry(i) for i in range(1, z + 1)))

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> List[int]:
        return [e.index for e in self.entries]


class PerformanceOracle(Protocol):
    """Scores a subset of mode indices; higher is better. Must be deterministic."""

    def value(self, subset: Subset) -> float: ...


class TableOracle:
    """Oracle backed by an explicit table ``{frozenset: score}``."""

    def __init__(self, table: Mapping[Iterable[int], float]):
        self.table = {frozenset(k): float(v) for k, v in table.items()}

    def value(self, subset: Subset) -> float:
        return self.table[frozenset(subset)]


class FunctionOracle:
    """Oracle wrapping a callable on frozensets, with optional bootstrap scores."""

    def __init__(self, fn: Callable[[Subset], float],
                 bootstrap: Optional[Callable[[int, int], Sequence[float]]] = None):
        self.fn = fn
        self._bootstrap = bootstrap

    def value(self, subset: Subset) -> float:
        return float(self.fn(frozenset(subset)))

    def bootstrap_scores(self, rounds: int, seed: int) -> Sequence[float]:
        if self._bootstrap is None:
            raise NotImplementedError
        return self._bootstrap(rounds, seed)


class CachedOracle:
    """Memoizing wrapper that counts calls reaching the wrapped oracle."""

    def __init__(self, oracle: PerformanceOracle):
        self.oracle = oracle
        self.calls = 0
        self._memo: Dict[Subset, float] = {}

    def value(self, subset: Subset) -> float:
        key = frozenset(subset)
        v = self._memo.get(key)
        if v is None:
            v = float(self.oracle.value(key))
            if not np.isfinite(v):
                raise ParameterError(f"oracle returned non-finite score for {sorted(key)}")
            self._memo[key] = v
            self.calls += 1
        return v


@dataclass
class ShapleyReport:
    values: np.ndarray
    ranking: List[int]
    top_k: List[int]
    estimator: str
    permutations_used: int
    converged: bool
    eps3: float
    oracle_calls: int = 0
    v_empty: float = float("nan")
    v_full: float = float("nan")
    history: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "ranking": list(self.ranking),
            "top_k": list(self.top_k),
            "estimator": self.estimator,
            "permutations": int(self.permutations_used),
            "converged": bool(self.converged),
            "eps3": float(self.eps3),
        }


def rank_modes(values: Sequence[float]) -> List[int]:
    """1-based indices by descending value, ties by ascending index."""
    v = np.asarray(values, dtype=float)
    return [int(i) + 1 for i in sorted(range(v.size), key=lambda i: (-v[i], i))]


def default_k(values: Sequence[float], mass: float = 0.95) -> int:
    """Smallest K whose top-K positive values hold ``mass`` of the total positive value.

    Returns 1 when no value is positive.
    """
    v = np.asarray(values, dtype=float)
    ordered = v[np.array(rank_modes(v)) - 1]
    pos = np.clip(ordered, 0.0, None)
    total = pos.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(pos)
    return int(np.searchsorted(cum, mass * total - 1e-12 * total) + 1)


def _finish(values: np.ndarray, k: Optional[int]) -> tuple:
    ranking = rank_modes(values)
    kk = default_k(values) if k is None else int(k)
    if not 1 <= kk <= values.size:
        raise ParameterError(f"K must lie in [1, {values.size}], got {kk}")
    return ranking, ranking[:kk]


def exact_shapley(dataset: Union[ModeDataset, int], oracle: PerformanceOracle,
                  k: Optional[int] = None) -> ShapleyReport:
    """Shapley values by full subset enumeration (``2^Z`` oracle calls, ``Z <= 12``)."""
    ds = ModeDataset.of_size(dataset) if isinstance(dataset, int) else dataset
    z = ds.size
    if z > EXACT_MAX_MODES:
        raise SizeError(f"exact enumeration supports Z <= {EXACT_MAX_MODES}, got {z}; "
                        "use monte_carlo_shapley")
    if z < 1:
        raise ParameterError("at least one mode is required")
    cached = CachedOracle(oracle)
    players = ds.indices
    weight = [math.factorial(s) * math.factorial(z - s - 1) / math.factorial(z) for s in range(z)]
    values = np.zeros(z)
    for pos, p in enumerate(players):
        others = [q for q in players if q != p]
        acc = 0.0
        for s in range(z):
            for sub in combinations(others, s):
                base = frozenset(sub)
                acc += weight[s] * (cached.value(base | {p}) - cached.value(base))
        values[pos] = acc
    ranking, top = _finish(values, k)
    return ShapleyReport(values, ranking, top, "exact", 0, True, 0.0, cached.calls,
                         cached.value(frozenset()), cached.value(frozenset(players)))


def permutation(seed: int, t: int, z: int) -> np.ndarray:
    """Permutation number ``t`` of ``0..z-1`` from a counter-based generator.

    The stream is keyed by ``seed`` and positioned by ``t``, so any
    permutation can be regenerated independently of the others.
    """
    bitgen = np.random.Philox(key=int(seed) & (2**64 - 1), counter=[0, int(t), 0, 0])
    return np.random.Generator(bitgen).permutation(z)


def convergence_check(history: Sequence[np.ndarray], window: int = CONVERGENCE_WINDOW,
                      tolerance: float = CONVERGENCE_TOLERANCE) -> bool:
    """Mean relative change over the last ``window`` permutations is below ``tolerance``.

    ``history[0]`` is the initial estimate and ``history[t]`` the estimate
    after permutation ``t``. Entries near zero use the absolute change.
    """
    if len(history) < window + 1:
        return False
    now = np.asarray(history[-1], dtype=float)
    then = np.asarray(history[-1 - window], dtype=float)
    diff = np.abs(now - then)
    mag = np.abs(now)
    rel = np.where(mag < _NEAR_ZERO, diff, diff / np.where(mag < _NEAR_ZERO, 1.0, mag))
    return bool(rel.mean() < tolerance)


def default_truncation_tolerance(oracle: PerformanceOracle, bootstrap_rounds: int = 20,
                                 seed: int = 0, full: Optional[Subset] = None) -> float:
    """Bootstrap standard deviation of the full-set score.

    Oracles without ``bootstrap_scores`` fall back to ``0.01 |V(D)|`` (``full``
    names the full set for that path).
    """
    fn = getattr(oracle, "bootstrap_scores", None)
    if fn is not None:
        try:
            scores = np.asarray(fn(bootstrap_rounds, seed), dtype=float)
        except NotImplementedError:
            scores = None
        if scores is not None:
            return float(np.std(scores, ddof=1)) if scores.size > 1 else 0.0
    if full is None:
        raise ParameterError("fallback tolerance needs the full mode set")
    v = float(oracle.value(frozenset(full)))
    log.info("oracle has no bootstrap support; eps3 falls back to 1%% of |V(D)| = %g", 0.01 * abs(v))
    return 0.01 * abs(v)


def monte_carlo_shapley(dataset: Union[ModeDataset, int], oracle: PerformanceOracle, seed: int = 0,
                        eps3: Union[float, str] = "auto", permutation_cap: int = DEFAULT_PERMUTATION_CAP,
                        k: Optional[int] = None, bootstrap_rounds: int = 20,
                        keep_history: bool = False) -> ShapleyReport:
    """Truncated permutation-sampling estimate of Shapley values.

    For each sampled ordering the prefix scores are evaluated in turn. From
    the second position on, once the running prefix score is within ``eps3``
    of ``V(D)`` the remaining marginals are set to zero without calling the
    oracle. Estimates are running means and sampling stops when
    :func:`convergence_check` passes or ``permutation_cap`` is reached.
    """
    ds = ModeDataset.of_size(dataset) if isinstance(dataset, int) else dataset
    z = ds.size
    if z < 1:
        raise ParameterError("at least one mode is required")
    players = np.array(ds.indices)
    cached = CachedOracle(oracle)
    full = frozenset(players.tolist())
    if eps3 == "auto" or eps3 is None:
        eps3 = default_truncation_tolerance(oracle, bootstrap_rounds, seed, full)
    eps3 = float(eps3)
    if not eps3 >= 0:
        raise ParameterError("eps3 must be non-negative")
    v_empty = cached.value(frozenset())
    v_full = cached.value(full)
    values = np.zeros(z)
    ring: deque = deque([values.copy()], maxlen=CONVERGENCE_WINDOW + 1)
    history: List[np.ndarray] = [values.copy()] if keep_history else []
    converged = False
    t = 0
    while t < int(permutation_cap):
        t += 1
        order = permutation(seed, t, z)
        prev = v_empty
        prefix: set = set()
        for j, pos in enumerate(order):
            prefix.add(int(players[pos]))
            if j > 0 and abs(v_full - prev) < eps3:
                cur = prev
            else:
                cur = cached.value(frozenset(prefix))
            values[pos] = ((t - 1) / t) * values[pos] + (cur - prev) / t
            prev = cur
        ring.append(values.copy())
        if keep_history:
            history.append(values.copy())
        if z == 1 or convergence_check(ring):
            converged = True
            break
    if not converged:
        log.warning("Monte Carlo Shapley stopped at the cap of %d permutations", permutation_cap)
    ranking, top = _finish(values, k)
    return ShapleyReport(values, ranking, top, "monte_carlo", t, converged, eps3, cached.calls,
                         v_empty, v_full, history)


def shapley(dataset: Union[ModeDataset, int], oracle: PerformanceOracle, *, method: str = "auto",
            exact_max_modes: int = 8, **kwargs) -> ShapleyReport:
    """Dispatch to the exact or Monte Carlo estimator.

    ``method="auto"`` enumerates when ``Z <= exact_max_modes``.
    """
    z = dataset if isinstance(dataset, int) else dataset.size
    if method == "exact" or (method == "auto" and z <= exact_max_modes):
        return exact_shapley(dataset, oracle, k=kwargs.get("k"))
    if method not in ("auto", "monte_carlo"):
        raise ParameterError(f"unknown Shapley method {method!r}")
    return monte_carlo_shapley(dataset, oracle, **kwargs)


def select_top_k(report: ShapleyReport, k: Optional[int] = None) -> List[tuple]:
    """First ``k`` ranked modes as ``(index, value)`` pairs, descending.

    ``k=None`` uses the report's own top-K selection.
    """
    z = len(report.values)
    if k is None:
        chosen = report.top_k
    else:
        if not 1 <= int(k) <= z:
            raise ParameterError(f"K must lie in [1, {z}], got {k}")
        chosen = report.ranking[: int(k)]
    return [(i, float(report.values[i - 1])) for i in chosen]
