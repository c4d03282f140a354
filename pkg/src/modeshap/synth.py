"""Deterministic synthetic signals and bundles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterError
from .predictor import CHANNELS, ChannelBundle

# Default AM-FM component bands as fractions of pi: slow, mid and fast motion.
AM_FM_BANDS: Tuple[Tuple[float, float], ...] = ((0.005, 0.01), (0.05, 0.07), (0.2, 0.3))


@dataclass(frozen=True)
class Tone:
    freq: float
    amp: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class Chirp:
    """``amp * cos(start * n + rate * n^2 + phase)``."""

    start: float
    rate: float
    amp: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    tones: Tuple[Tone, ...] = ()
    chirp: Optional[Chirp] = None
    noise_sigma: float = 0.0
    n: int = 1024
    seed: int = 0
    vary_channels: bool = False
    side: str = "H"

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        tones = tuple(Tone(*t) if isinstance(t, (list, tuple)) else Tone(**t) for t in d.get("tones", ()))
        ch = d.get("chirp")
        chirp = None if ch is None else (Chirp(*ch) if isinstance(ch, (list, tuple)) else Chirp(**ch))
        return cls(tones, chirp, float(d.get("noise_sigma", 0.0)), int(d.get("n", d.get("N", 1024))),
                   int(d.get("seed", 0)), bool(d.get("vary_channels", False)), d.get("side", "H"))


def synth_signal(spec: SynthSpec, stream: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Noisy and clean samples for ``spec``; ``stream`` selects an independent noise draw."""
    if spec.n < 64:
        raise ParameterError("synthetic signals need n >= 64")
    if spec.noise_sigma < 0:
        raise ParameterError("noise_sigma must be non-negative")
    for t in spec.tones:
        if not 0 < t.freq < np.pi:
            raise ParameterError(f"tone frequency {t.freq} outside (0, pi)")
    n = np.arange(spec.n)
    clean = np.zeros(spec.n)
    for t in spec.tones:
        clean += t.amp * np.cos(t.freq * n + t.phase)
    if spec.chirp is not None:
        c = spec.chirp
        top = c.start + 2 * c.rate * (spec.n - 1)
        if not (0 < c.start < np.pi and 0 < top < np.pi):
            raise ParameterError("chirp sweeps outside (0, pi)")
        clean += c.amp * np.cos(c.start * n + c.rate * n ** 2 + c.phase)
    rng = np.random.default_rng([spec.seed, stream])
    noisy = clean + (rng.normal(0.0, spec.noise_sigma, spec.n) if spec.noise_sigma > 0 else 0.0)
    return noisy, clean


def synth(spec: SynthSpec) -> ChannelBundle:
    """Bundle of the same clean signal on all nine channels.

    With ``vary_channels`` each channel gets its own noise draw, otherwise all
    channels are identical.
    """
    chans = {}
    for i, name in enumerate(CHANNELS):
        chans[name] = synth_signal(spec, i if spec.vary_channels else 0)[0]
    return ChannelBundle(spec.side, chans)


def narrowband_noise(n: int, rng: np.random.Generator, center: float, bandwidth: float) -> np.ndarray:
    """Unit-variance white noise through a two-pole resonator at ``center`` (pole radius ``1 - bandwidth``)."""
    r = 1.0 - bandwidth
    burn = int(10 / max(bandwidth, 1e-3))
    e = rng.normal(0.0, 1.0, n + burn)
    y = lfilter([1.0], [1.0, -2.0 * r * np.cos(center), r * r], e)[burn:]
    return y / np.std(y)


def am_fm_signal(n: int, rng: np.random.Generator, bands: Sequence[Tuple[float, float]] = AM_FM_BANDS,
                 snr_db: float = 15.0, drift: float = 0.0, offset: float = 5.0,
                 nuisance_bands: Sequence[Tuple[float, float]] = (), nuisance_power: float = 0.2,
                 nuisance_bandwidth: float = 0.02) -> Tuple[np.ndarray, np.ndarray]:
    """One AM-FM channel: a component per band plus white noise and a DC offset.

    Each component is ``A (1 + a cos(nu n + p)) cos(w0 n + drift w0 n^2 / n_total + f sin(nu_f n) + q)``
    with ``w0`` drawn from its band (fractions of pi). ``drift`` makes the
    instantaneous frequency grow linearly to ``w0 (1 + 2 drift)`` at the end.
    The offset is ``offset`` times the peak amplitude ``sqrt(2 P)`` of the clean signal.
    Each of ``nuisance_bands`` adds :func:`narrowband_noise` with power
    ``nuisance_power * P``: spectrally compact, so it is extracted as a mode,
    but with no deterministic phase to extrapolate.
    Returns ``(noisy, clean)`` where ``clean`` excludes noise, nuisance and offset.
    """
    t = np.arange(n)
    s = np.zeros(n)
    for lo, hi in bands:
        w0 = rng.uniform(lo, hi) * np.pi
        amp = rng.uniform(0.5, 1.0)
        am = rng.uniform(0.1, 0.4)
        nu = rng.uniform(0.001, 0.005)
        fm = rng.uniform(0.0, 0.3)
        nuf = rng.uniform(0.0005, 0.002)
        p1, p2 = rng.uniform(0, 2 * np.pi, 2)
        phase = w0 * t + drift * w0 * t ** 2 / n + fm * np.sin(nuf * t) + p1
        s += amp * (1 + am * np.cos(nu * t + p2)) * np.cos(phase)
    power = float(np.mean(s ** 2))
    noise = rng.normal(0.0, np.sqrt(power / 10 ** (snr_db / 10)), n)
    extra = np.zeros(n)
    for lo, hi in nuisance_bands:
        extra += np.sqrt(nuisance_power * power) * narrowband_noise(n, rng, rng.uniform(lo, hi) * np.pi,
                                                                     nuisance_bandwidth)
    return s + noise + extra + offset * np.sqrt(2 * power), s


def am_fm_bundle(n: int = 5000, seed: int = 0, side: str = "H", **kwargs) -> ChannelBundle:
    """Bundle whose nine channels are independent :func:`am_fm_signal` draws."""
    rng = np.random.default_rng([seed, 0 if side == "H" else 1])
    return ChannelBundle(side, {c: am_fm_signal(n, rng, **kwargs)[0] for c in CHANNELS})
