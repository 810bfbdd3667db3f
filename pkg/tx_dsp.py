#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Transmitter DSP - Gaussian symbols, training, pulse shaping and frame layout

Alice's side of the link:
- Gaussian-modulated symbols from 16-bit uniform words (Box-Muller)
- Evenly spaced QPSK training interleaved at a fixed ratio
- RRC shaping at 5 samples per symbol and a digital frequency shift
- Pilot tone synthesis for the phase-reference branch
- Alternating signal/calibration slot schedule for AOM gating
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from qkd_errors import ValidationError
from signal_core import (RngStream, Waveform, bits_to_uniform, box_muller,
                         design_rrc)

logger = logging.getLogger(__name__)

WORD_BITS = 16


class SymbolRole(IntEnum):
    DATA = 0
    TRAINING = 1
    CALIBRATION = 2


@dataclass
class TrainingPattern:
    """Known training layout of a frame: where training sits and what it is"""
    n_total: int
    positions: np.ndarray
    symbols: np.ndarray
    ratio: float
    seed: int
    amplitude: float

    @property
    def n_training(self) -> int:
        return int(self.positions.size)

    @property
    def n_data(self) -> int:
        return self.n_total - self.n_training

    def reference(self) -> np.ndarray:
        """Length-n_total complex array with training at its positions, zero elsewhere"""
        ref = np.zeros(self.n_total, dtype=np.complex128)
        ref[self.positions] = self.symbols
        return ref

    def roles(self) -> np.ndarray:
        roles = np.full(self.n_total, SymbolRole.DATA, dtype=np.uint8)
        roles[self.positions] = SymbolRole.TRAINING
        return roles

    def data_mask(self) -> np.ndarray:
        mask = np.ones(self.n_total, dtype=bool)
        mask[self.positions] = False
        return mask


@dataclass
class SymbolFrame:
    """Symbols at one per symbol period, each tagged with its role"""
    symbols: np.ndarray
    roles: np.ndarray
    symbol_rate: float
    pattern: Optional[TrainingPattern] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        self.roles = np.asarray(self.roles, dtype=np.uint8)
        if self.symbols.shape != self.roles.shape or self.symbols.ndim != 1:
            raise ValidationError("Symbols and roles must be 1-D arrays of equal length")
        if not self.symbol_rate > 0:
            raise ValidationError(f"Symbol rate must be positive, got {self.symbol_rate}")

    def __len__(self) -> int:
        return self.symbols.size

    def mask(self, role: SymbolRole) -> np.ndarray:
        return self.roles == role

    def data_symbols(self) -> np.ndarray:
        return self.symbols[self.mask(SymbolRole.DATA)]

    def training_symbols(self) -> np.ndarray:
        return self.symbols[self.mask(SymbolRole.TRAINING)]


# ============================================================================
# Symbol generation
# ============================================================================

def generate_gaussian_symbols(n: int, v_mod: float, rng: RngStream,
                              symbol_rate: float = 1e9, word_bits: int = WORD_BITS) -> SymbolFrame:
    """
    n complex Gaussian symbols with variance v_mod per quadrature; v_mod = 0
    gives an all-zero frame.

    Uniforms come from word_bits-wide words: u1 = (k+1)/2^bits in (0, 1],
    u2 = k/2^bits in [0, 1). The same RngStream always yields the same frame.
    """
    if n <= 0:
        raise ValidationError(f"Symbol count must be positive, got {n}")
    if not v_mod >= 0:
        raise ValidationError(f"Modulation variance must be >= 0, got {v_mod}")

    words = rng.words(2 * n, bits=word_bits)
    u1 = bits_to_uniform(words[0::2], word_bits, 'open_low')
    u2 = bits_to_uniform(words[1::2], word_bits, 'open_high')
    z1, z2 = box_muller(u1, u2)
    symbols = math.sqrt(v_mod) * (z1 + 1j * z2)
    return SymbolFrame(symbols, np.full(n, SymbolRole.DATA, dtype=np.uint8), symbol_rate)


def build_training_pattern(n_data: int, ratio: float, seed: int, amplitude: float) -> TrainingPattern:
    """
    Evenly spaced QPSK training for a frame carrying n_data data symbols.

    The training values depend only on (seed, amplitude), so every frame
    built from the same seed carries the same training sequence.
    """
    if not 0.0 < ratio <= 0.5:
        raise ValidationError(f"Training ratio must lie in (0, 0.5], got {ratio}")
    if n_data <= 0:
        raise ValidationError(f"Data symbol count must be positive, got {n_data}")
    if not amplitude > 0:
        raise ValidationError(f"Training amplitude must be positive, got {amplitude}")

    n_train = int(round(n_data * ratio / (1.0 - ratio)))
    if n_train < 1:
        raise ValidationError(f"Ratio {ratio} leaves no training symbols for {n_data} data symbols")
    n_total = n_data + n_train
    positions = np.floor(np.arange(n_train) * n_total / n_train).astype(np.int64)

    bits = RngStream(seed, 'training').generator().integers(0, 2, size=(n_train, 2))
    symbols = amplitude * ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1]))
    return TrainingPattern(n_total, positions, symbols.astype(np.complex128), ratio, seed, amplitude)


def interleave_training(frame: SymbolFrame, training_ratio: float, pattern_seed: int = 0,
                        v_mod: Optional[float] = None) -> SymbolFrame:
    """
    Insert training into a data frame.

    Training amplitude is sqrt(v_mod) per quadrature so training power equals
    data power. Without v_mod the data's per-quadrature variance is used.
    """
    data = frame.symbols
    if v_mod is None:
        v_mod = 0.5 * float(np.mean(np.abs(data) ** 2))
    pattern = build_training_pattern(data.size, training_ratio, pattern_seed, math.sqrt(v_mod))

    symbols = np.empty(pattern.n_total, dtype=np.complex128)
    mask = pattern.data_mask()
    symbols[mask] = data
    symbols[pattern.positions] = pattern.symbols
    return SymbolFrame(symbols, pattern.roles(), frame.symbol_rate, pattern=pattern)


def deinterleave_training(frame: SymbolFrame) -> SymbolFrame:
    """Drop training symbols; inverse of interleave_training for the data"""
    mask = frame.mask(SymbolRole.DATA)
    return SymbolFrame(frame.symbols[mask], frame.roles[mask], frame.symbol_rate)


# ============================================================================
# Shaping
# ============================================================================

def shape_baseband(frame: SymbolFrame, sps: int, rolloff: float,
                   span_symbols: int = 32) -> np.ndarray:
    """Zero-insertion upsampling followed by a unit-energy RRC"""
    taps = design_rrc(rolloff, span_symbols, sps)
    upsampled = np.zeros(len(frame) * sps, dtype=np.complex128)
    upsampled[::sps] = frame.symbols
    return fftconvolve(upsampled, taps, mode='same')


def shape_and_upconvert(frame: SymbolFrame, sps: int = 5, rolloff: float = 0.3,
                        f_shift: float = 750e6, sample_rate: float = 5e9,
                        span_symbols: int = 32, carrier_amplitude: float = 0.0) -> Waveform:
    """
    Shape symbols and move them to f_shift.

    Returns the real DAC waveform with the complex field kept as analytic.
    carrier_amplitude adds a residual optical carrier at 0 Hz.
    """
    if not math.isclose(sample_rate, sps * frame.symbol_rate, rel_tol=1e-9):
        raise ValidationError(
            f"Sample rate {sample_rate} must equal sps ({sps}) x symbol rate ({frame.symbol_rate})")
    half_band = 0.5 * (1.0 + rolloff) * frame.symbol_rate
    if f_shift - half_band <= 0.0:
        raise ValidationError(
            f"Shift {f_shift / 1e6:.0f} MHz does not separate the sidebands (half band {half_band / 1e6:.0f} MHz)")
    if f_shift + half_band >= 0.5 * sample_rate:
        raise ValidationError(
            f"Shifted band edge {(f_shift + half_band) / 1e6:.0f} MHz reaches Nyquist")

    baseband = shape_baseband(frame, sps, rolloff, span_symbols)
    n = np.arange(baseband.size)
    analytic = baseband * np.exp(2j * np.pi * f_shift * n / sample_rate)
    if carrier_amplitude:
        analytic = analytic + carrier_amplitude

    logger.debug("Shaped %d symbols into %d samples at %.0f MHz", len(frame), analytic.size, f_shift / 1e6)
    return Waveform(analytic.real.copy(), sample_rate, center_frequency_hint=f_shift,
                    symbol_rate=frame.symbol_rate, rolloff=rolloff, analytic=analytic)


def synthesize_pilot(sample_rate: float, f_pilot: float, power_ratio_db: float, length: int,
                     reference_power: float = 1.0,
                     quantum_band: Optional[Tuple[float, float]] = None) -> Waveform:
    """Complex pilot tone at f_pilot, power_ratio_db above reference_power"""
    if not 0.0 < f_pilot < 0.5 * sample_rate:
        raise ValidationError(f"Pilot frequency {f_pilot} must lie in (0, fs/2)")
    if length <= 0:
        raise ValidationError(f"Pilot length must be positive, got {length}")
    if quantum_band is not None and quantum_band[0] <= f_pilot <= quantum_band[1]:
        raise ValidationError(
            f"Pilot at {f_pilot / 1e6:.1f} MHz collides with the quantum band "
            f"[{quantum_band[0] / 1e6:.0f}, {quantum_band[1] / 1e6:.0f}] MHz")
    amplitude = math.sqrt(reference_power * 10.0 ** (power_ratio_db / 10.0))
    n = np.arange(length)
    tone = amplitude * np.exp(2j * np.pi * f_pilot * n / sample_rate)
    return Waveform(tone, sample_rate, center_frequency_hint=f_pilot)


# ============================================================================
# Frame schedule
# ============================================================================

class SlotKind(Enum):
    SIGNAL = 'signal'
    CALIBRATION = 'calibration'


@dataclass(frozen=True)
class Slot:
    index: int
    kind: SlotKind
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class FrameSchedule:
    """Alternating signal and calibration slots covering a sample record"""
    total_samples: int
    overhead: float
    slots: List[Slot]

    @property
    def usable_fraction(self) -> float:
        return 1.0 - self.overhead

    def slots_of(self, kind: SlotKind) -> List[Slot]:
        return [s for s in self.slots if s.kind == kind]

    def mask(self, kind: SlotKind) -> np.ndarray:
        m = np.zeros(self.total_samples, dtype=bool)
        for s in self.slots_of(kind):
            m[s.start:s.stop] = True
        return m

    def samples_of(self, samples: np.ndarray, kind: SlotKind) -> np.ndarray:
        if samples.size != self.total_samples:
            raise ValidationError(
                f"Trace length {samples.size} does not match schedule length {self.total_samples}")
        parts = [samples[s.start:s.stop] for s in self.slots_of(kind)]
        if not parts:
            return samples[:0]
        return np.concatenate(parts)


def build_frame_schedule(total_samples: int, overhead: float,
                         calib_slot_samples: int) -> FrameSchedule:
    """
    Tile total_samples with (signal, calibration) slot pairs.

    The signal slot length follows from overhead = cal / (signal + cal).
    overhead = 0 gives one signal slot covering everything.
    """
    if total_samples <= 0:
        raise ValidationError(f"Total samples must be positive, got {total_samples}")
    if not 0.0 <= overhead < 1.0:
        raise ValidationError(f"Overhead must lie in [0, 1), got {overhead}")

    if overhead == 0.0:
        return FrameSchedule(total_samples, 0.0, [Slot(0, SlotKind.SIGNAL, 0, total_samples)])

    if calib_slot_samples <= 0:
        raise ValidationError(f"Calibration slot length must be positive, got {calib_slot_samples}")
    signal_exact = calib_slot_samples * (1.0 - overhead) / overhead
    signal_len = int(round(signal_exact))
    if signal_len <= 0 or not math.isclose(signal_exact, signal_len, rel_tol=0, abs_tol=1e-6):
        raise ValidationError(
            f"Overhead {overhead} with {calib_slot_samples}-sample calibration slots "
            f"does not give an integer signal slot")
    period = signal_len + calib_slot_samples
    if total_samples % period:
        raise ValidationError(
            f"{total_samples} samples is not a whole number of {period}-sample slot pairs")

    slots = []
    for k, start in enumerate(range(0, total_samples, period)):
        slots.append(Slot(2 * k, SlotKind.SIGNAL, start, signal_len))
        slots.append(Slot(2 * k + 1, SlotKind.CALIBRATION, start + signal_len, calib_slot_samples))
    return FrameSchedule(total_samples, overhead, slots)
