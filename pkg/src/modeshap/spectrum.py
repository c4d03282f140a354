"""Half-spectrum DFT, analytic signals and spectral utilities.

All spectra live on the grid ``omega_j = 2*pi*j/N`` for ``j = 0 .. N//2``,
i.e. normalized angular frequency in ``[0, pi]``. The forward transform is the
unnormalized DFT, so a constant ``c`` of length ``N`` has ``bins[0] == N*c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DegenerateSpectrumError, InputError, StructuralError

DEFAULT_SAMPLE_RATE_HZ = 1000.0
MIN_LENGTH = 8


def frequency_grid(n: int) -> np.ndarray:
    """Normalized angular frequencies of the half-spectrum of an ``n``-point DFT."""
    return 2.0 * np.pi * np.arange(n // 2 + 1) / n


@dataclass(frozen=True)
class DiscreteSignal:
    """A uniformly sampled real sequence.

    Parameters
    ----------
    samples : array_like
        Real samples. Copied into a read-only float64 array.
    sample_rate_hz : float
        Sampling rate, 1 kHz by default.
    """

    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        x = np.array(self.samples, dtype=float, copy=True).ravel()
        if x.size < MIN_LENGTH:
            raise InputError(f"signal needs at least {MIN_LENGTH} samples, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise InputError("signal contains non-finite samples")
        if not (self.sample_rate_hz > 0 and np.isfinite(self.sample_rate_hz)):
            raise InputError("sample rate must be positive and finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def length(self) -> int:
        return self.samples.size


SignalLike = Union[DiscreteSignal, np.ndarray, list, tuple]


def as_signal(x: SignalLike) -> DiscreteSignal:
    """Wrap array-like input in a validated :class:`DiscreteSignal`."""
    return x if isinstance(x, DiscreteSignal) else DiscreteSignal(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class HalfSpectrum:
    """Non-negative-frequency DFT bins of a real sequence of ``origin_length`` samples."""

    bins: np.ndarray
    origin_length: int

    def __post_init__(self) -> None:
        b = np.array(self.bins, dtype=complex, copy=True).ravel()
        n = int(self.origin_length)
        if n < 1 or b.size != n // 2 + 1:
            raise StructuralError(
                f"half spectrum of length {b.size} does not match origin length {n}"
            )
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)
        object.__setattr__(self, "origin_length", n)

    @property
    def grid(self) -> np.ndarray:
        return frequency_grid(self.origin_length)

    def power(self) -> np.ndarray:
        return np.abs(self.bins) ** 2


@dataclass(frozen=True)
class AnalyticSignal:
    """Analytic signal with its polar decomposition.

    ``inst_freq[n] = phase[n+1] - phase[n]`` for ``n < N-1``; the last entry
    repeats the backward difference. ``reliable`` is False at both ends,
    where the circular DFT makes the estimate untrustworthy.
    """

    values: np.ndarray
    envelope: np.ndarray
    phase: np.ndarray
    inst_freq: np.ndarray
    reliable: np.ndarray = field(repr=False)


def forward_half_spectrum(signal: SignalLike) -> HalfSpectrum:
    """DFT of a real signal evaluated on the half-spectrum grid."""
    s = as_signal(signal)
    return HalfSpectrum(np.fft.rfft(s.samples), s.length)


def inverse_real(spec: HalfSpectrum) -> DiscreteSignal:
    """Real inverse DFT of a half spectrum via its conjugate-symmetric extension."""
    if not isinstance(spec, HalfSpectrum):
        raise StructuralError("inverse_real expects a HalfSpectrum")
    return DiscreteSignal(np.fft.irfft(spec.bins, spec.origin_length))


def hilbert_multiplier(n: int) -> np.ndarray:
    """Full-length DFT multiplier of the discrete Hilbert transform.

    Even ``n``: ``-1j`` on ``1 <= k < n/2``, ``0`` at ``k = 0, n/2`` and ``+1j`` above.
    Odd ``n`` uses the usual one-sided convention: ``-1j`` on ``1 <= k <= (n-1)/2``,
    ``+1j`` on the mirrored bins and ``0`` at DC.
    """
    h = np.zeros(n, dtype=complex)
    half = (n + 1) // 2  # first index of the negative-frequency half
    h[1:half] = -1j
    h[n // 2 + 1:] = 1j
    if n % 2 == 0:
        h[n // 2] = 0.0
    return h


def hilbert_transform(signal: SignalLike) -> np.ndarray:
    """Discrete Hilbert transform computed with :func:`hilbert_multiplier`."""
    x = as_signal(signal).samples
    return np.fft.ifft(np.fft.fft(x) * hilbert_multiplier(x.size)).real


def analytic(signal: SignalLike) -> AnalyticSignal:
    """Analytic signal ``x + j*H{x}`` with envelope, unwrapped phase and instantaneous frequency."""
    x = as_signal(signal).samples
    values = x + 1j * hilbert_transform(x)
    envelope = np.abs(values)
    phase = np.unwrap(np.angle(values))
    d = np.diff(phase)
    inst_freq = np.append(d, d[-1])
    reliable = np.ones(x.size, dtype=bool)
    reliable[[0, -1]] = False
    return AnalyticSignal(values, envelope, phase, inst_freq, reliable)


def spectral_centroid(spec: Union[HalfSpectrum, np.ndarray], grid: np.ndarray | None = None) -> float:
    """Power-weighted mean frequency ``sum(w |M|^2) / sum(|M|^2)``.

    Accepts a :class:`HalfSpectrum` or raw bins with an explicit ``grid``.
    """
    if isinstance(spec, HalfSpectrum):
        bins, grid = spec.bins, spec.grid
    else:
        bins = np.asarray(spec)
        if grid is None:
            raise StructuralError("raw bins need an explicit grid")
    p = np.abs(bins) ** 2
    total = p.sum()
    if not total > 0:
        raise DegenerateSpectrumError("centroid of a zero-energy spectrum is undefined")
    return float(np.dot(grid, p) / total)


def parseval_energy(spec: HalfSpectrum) -> float:
    """Time-domain energy ``sum(x**2)`` computed from the half spectrum."""
    n = spec.origin_length
    w = np.full(spec.bins.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return float(np.dot(w, np.abs(spec.bins) ** 2) / n)
