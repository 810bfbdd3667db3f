#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Signal Core - shared sample containers, seeded randomness and filter design

Every other stage builds on the pieces here:
- Waveform: uniformly sampled real or complex trace with spectral metadata
- RngStream: counter-based, stream-addressable random source
- Box-Muller and 16-bit word helpers for Gaussian symbol generation
- RRC design, ideal band-pass and rational resampling
"""

import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from scipy import signal

from qkd_errors import ValidationError

logger = logging.getLogger(__name__)

# Stop-band attenuation for the anti-alias filter used by resample()
RESAMPLE_STOPBAND_DB = 80.0

_SEED_MASK = (1 << 64) - 1


# ============================================================================
# dB helpers
# ============================================================================

@dataclass(frozen=True)
class DecibelValue:
    """A power ratio expressed in dB"""
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValidationError(f"dB value must be finite, got {self.value}")

    @property
    def linear(self) -> float:
        return 10.0 ** (self.value / 10.0)

    @classmethod
    def from_linear(cls, ratio: float) -> 'DecibelValue':
        return linear_to_db(ratio)

    def __float__(self) -> float:
        return float(self.value)


def db_to_linear(x: Union[DecibelValue, float]) -> float:
    """Convert a dB power ratio to a linear ratio"""
    if isinstance(x, DecibelValue):
        return x.linear
    if not math.isfinite(x):
        raise ValidationError(f"dB value must be finite, got {x}")
    return 10.0 ** (x / 10.0)


def linear_to_db(ratio: float) -> DecibelValue:
    """Convert a positive linear power ratio to dB"""
    if not ratio > 0 or not math.isfinite(ratio):
        raise ValidationError(f"Linear ratio must be positive and finite, got {ratio}")
    return DecibelValue(10.0 * math.log10(ratio))


# ============================================================================
# Waveform container
# ============================================================================

@dataclass
class Waveform:
    """
    Uniformly sampled trace.

    samples is either real (a physical detector trace or a real RF signal)
    or complex (a field or baseband signal). When a real RF signal was built
    from a complex field, the field is kept in `analytic` so later stages
    can work on it without a Hilbert transform.
    """
    samples: np.ndarray
    sample_rate: float
    center_frequency_hint: float = 0.0
    symbol_rate: Optional[float] = None
    rolloff: Optional[float] = None
    analytic: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValidationError("Waveform samples must be one-dimensional")
        if self.samples.size == 0:
            raise ValidationError("Waveform must contain at least one sample")
        if not self.sample_rate > 0 or not math.isfinite(self.sample_rate):
            raise ValidationError(f"Sample rate must be positive, got {self.sample_rate}")
        if not np.iscomplexobj(self.samples):
            self.samples = self.samples.astype(np.float64, copy=False)
        if self.analytic is not None:
            self.analytic = np.asarray(self.analytic, dtype=np.complex128)
            if self.analytic.shape != self.samples.shape:
                raise ValidationError("Analytic field length differs from samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def field(self) -> np.ndarray:
        """Complex field view: the analytic signal if known, else samples as complex"""
        if self.analytic is not None:
            return self.analytic
        return self.samples.astype(np.complex128, copy=False)

    def time_axis(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def occupied_band(self) -> Optional[Tuple[float, float]]:
        """(low, high) edges of the shaped spectrum, or None without metadata"""
        if self.symbol_rate is None or self.rolloff is None:
            return None
        half = 0.5 * (1.0 + self.rolloff) * self.symbol_rate
        return (self.center_frequency_hint - half, self.center_frequency_hint + half)

    def with_samples(self, samples: np.ndarray, **changes) -> 'Waveform':
        """Copy with new samples; analytic is dropped unless given"""
        changes.setdefault('analytic', None)
        return replace(self, samples=samples, **changes)

    def slice(self, start: int, stop: int) -> 'Waveform':
        if not 0 <= start < stop <= self.samples.size:
            raise ValidationError(f"Invalid slice [{start}, {stop}) for length {self.samples.size}")
        analytic = None if self.analytic is None else self.analytic[start:stop].copy()
        return replace(self, samples=self.samples[start:stop].copy(), analytic=analytic)

    def padded(self, total: int) -> 'Waveform':
        """Zero-pad at the end to `total` samples"""
        extra = total - self.samples.size
        if extra < 0:
            raise ValidationError(f"Cannot pad length {self.samples.size} down to {total}")
        analytic = None if self.analytic is None else np.concatenate(
            [self.analytic, np.zeros(extra, dtype=np.complex128)])
        samples = np.concatenate([self.samples, np.zeros(extra, dtype=self.samples.dtype)])
        return replace(self, samples=samples, analytic=analytic)


# ============================================================================
# Randomness
# ============================================================================

def _stream_key(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    raise ValidationError(f"Stream key must be a non-negative int or a str, got {key!r}")


@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream addressed by (seed, stream_id, path).

    Two streams with the same address produce identical sequences; any other
    address gives an independent sequence. Backed by Philox so that child
    streams can be spawned for frames and stages without coordination.
    """
    seed: int
    stream_id: Union[int, str] = 0
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)):
            raise ValidationError(f"Seed must be an integer, got {self.seed!r}")

    def _seed_sequence(self) -> np.random.SeedSequence:
        spawn_key = (_stream_key(self.stream_id),) + tuple(self.path)
        return np.random.SeedSequence(entropy=int(self.seed) & _SEED_MASK, spawn_key=spawn_key)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream"""
        return np.random.Generator(np.random.Philox(self._seed_sequence()))

    def child(self, *keys: Union[int, str]) -> 'RngStream':
        return RngStream(self.seed, self.stream_id, self.path + tuple(_stream_key(k) for k in keys))

    def words(self, count: int, bits: int = 16) -> np.ndarray:
        """`count` uniformly distributed unsigned integers of `bits` width"""
        if not 1 <= bits <= 32:
            raise ValidationError(f"Word width must be in [1, 32], got {bits}")
        return self.generator().integers(0, 1 << bits, size=count, dtype=np.uint64)


def bits_to_uniform(words: np.ndarray, bits: int = 16, interval: str = 'open_low') -> np.ndarray:
    """
    Map integer words to uniform reals.

    'open_low' gives (0, 1] via (k + 1) / 2^bits, 'open_high' gives [0, 1)
    via k / 2^bits.
    """
    w = np.asarray(words, dtype=np.float64)
    scale = float(1 << bits)
    if np.any(w < 0) or np.any(w >= scale):
        raise ValidationError(f"Words must lie in [0, 2^{bits})")
    if interval == 'open_low':
        return (w + 1.0) / scale
    if interval == 'open_high':
        return w / scale
    raise ValidationError(f"Unknown interval '{interval}'")


def box_muller(u1, u2):
    """
    Two independent N(0, 1) draws from uniforms u1 in (0, 1] and u2 in [0, 1).

    Accepts scalars or arrays. u1 = 0 is rejected.
    """
    scalar = np.isscalar(u1) and np.isscalar(u2)
    a = np.asarray(u1, dtype=np.float64)
    b = np.asarray(u2, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(a > 1.0):
        raise ValidationError("u1 must lie in (0, 1]")
    if np.any(b < 0.0) or np.any(b >= 1.0):
        raise ValidationError("u2 must lie in [0, 1)")
    r = np.sqrt(-2.0 * np.log(a))
    z1 = r * np.cos(2.0 * np.pi * b)
    z2 = r * np.sin(2.0 * np.pi * b)
    if scalar:
        return float(z1), float(z2)
    return z1, z2


# ============================================================================
# Filters
# ============================================================================

def _rrc_impulse(rolloff: float, span_symbols: int, sps: int) -> np.ndarray:
    """Unnormalized RRC impulse sampled at `sps`, peak near 1 + beta(4/pi - 1)"""
    beta = rolloff
    n = span_symbols * sps + 1
    t = (np.arange(n) - n // 2) / sps
    h = np.empty(n)

    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), atol=1e-9)
    regular = ~(at_zero | at_sing)

    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    h[regular] = num / den
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    h[at_sing] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    return h


def _check_rrc_args(rolloff: float, span_symbols: int, sps: int):
    if not 0.0 < rolloff <= 1.0:
        raise ValidationError(f"Roll-off must lie in (0, 1], got {rolloff}")
    if span_symbols <= 0 or span_symbols % 2:
        raise ValidationError(f"RRC span must be a positive even symbol count, got {span_symbols}")
    if int(sps) != sps or sps < 2:
        raise ValidationError(f"Samples per symbol must be an integer >= 2, got {sps}")


def design_rrc(rolloff: float, span_symbols: int = 32, sps: int = 4) -> np.ndarray:
    """Root-raised-cosine taps, length span*sps + 1, scaled to unit energy"""
    _check_rrc_args(rolloff, span_symbols, sps)
    h = _rrc_impulse(rolloff, span_symbols, int(sps))
    return h / np.sqrt(np.sum(h ** 2))


def rrc_cascade_gain(rolloff: float, span_symbols: int, sps_tx: int, sps_rx: int) -> float:
    """
    Peak gain of a unit-energy RRC at sps_tx followed by a unit-energy RRC
    matched filter at sps_rx, for a transmitted symbol of amplitude 1.
    """
    _check_rrc_args(rolloff, span_symbols, sps_tx)
    _check_rrc_args(rolloff, span_symbols, sps_rx)
    e_tx = np.sum(_rrc_impulse(rolloff, span_symbols, int(sps_tx)) ** 2)
    e_rx = np.sum(_rrc_impulse(rolloff, span_symbols, int(sps_rx)) ** 2)
    return float(np.sqrt(e_rx / e_tx))


def ideal_bandpass(w: Waveform, f_center: float, bandwidth: float,
                   keep_mirror: bool = True) -> Waveform:
    """
    Zero every FFT bin outside [f_center - bandwidth/2, f_center + bandwidth/2].

    For a real input with keep_mirror the mirrored band is kept too and the
    result stays real. With keep_mirror=False a real input yields the complex
    one-sided band, with no amplitude correction.
    """
    if not bandwidth > 0:
        raise ValidationError(f"Bandwidth must be positive, got {bandwidth}")
    nyquist = 0.5 * w.sample_rate
    if abs(f_center) + 0.5 * bandwidth > nyquist * (1 + 1e-12):
        raise ValidationError(
            f"Band {f_center / 1e6:.1f} MHz +/- {bandwidth / 2e6:.1f} MHz exceeds Nyquist {nyquist / 1e6:.1f} MHz")

    x = w.samples
    spectrum = np.fft.fft(x)
    freqs = np.fft.fftfreq(x.size, d=1.0 / w.sample_rate)
    half = 0.5 * bandwidth
    mask = np.abs(freqs - f_center) <= half
    real_out = not w.is_complex and keep_mirror
    if real_out:
        mask |= np.abs(freqs + f_center) <= half

    out = np.fft.ifft(np.where(mask, spectrum, 0.0))
    if real_out:
        out = out.real
    return w.with_samples(out)


@lru_cache(maxsize=32)
def _antialias_taps(up: int, down: int, stopband_db: float) -> np.ndarray:
    max_rate = max(up, down)
    numtaps, beta = signal.kaiserord(stopband_db, 0.05 / max_rate)
    numtaps |= 1
    taps = signal.firwin(numtaps, 0.95 / max_rate, window=('kaiser', beta))
    return taps / np.sum(taps)


def resample(w: Waveform, up: int, down: int,
             stopband_db: float = RESAMPLE_STOPBAND_DB) -> Waveform:
    """
    Rational resampling by up/down with a Kaiser-window anti-alias filter.

    up == down == 1 returns an exact copy.
    """
    if int(up) != up or int(down) != down or up < 1 or down < 1:
        raise ValidationError(f"Resampling factors must be positive integers, got {up}/{down}")
    up, down = int(up), int(down)
    if math.gcd(up, down) != 1:
        raise ValidationError(f"Resampling factors must be coprime, got {up}/{down}")
    if up == 1 and down == 1:
        return w.with_samples(w.samples.copy(), analytic=None if w.analytic is None else w.analytic.copy())

    taps = _antialias_taps(up, down, float(stopband_db))
    out = signal.resample_poly(w.samples, up, down, window=taps)
    logger.debug("Resampled %d -> %d samples (%d/%d, %d taps)", len(w), out.size, up, down, taps.size)
    return w.with_samples(out, sample_rate=w.sample_rate * up / down)
