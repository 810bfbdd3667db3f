#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Receiver DSP - frequency and phase recovery, matched filtering, sync, equalization

Bob's chain for one frame:
    pilot trace   -> FOE -> downconvert (narrow) -> phase trajectory
    quantum trace -> downconvert (wide) -> phase compensation
                  -> resample to 4 sps -> RRC matched filter -> training sync
                  -> 2x2 MIMO equalizer
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import signal
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve

from lms_kernels import nlms_train
from qkd_errors import EstimationFailure, SyncFailure, ValidationError
from signal_core import Waveform, design_rrc, ideal_bandpass, resample, rrc_cascade_gain
from tx_dsp import SymbolFrame, SymbolRole, TrainingPattern

logger = logging.getLogger(__name__)

MIN_FOE_SAMPLES = 1 << 14
COND_LIMIT = 1e12
EQUALIZER_MODES = ('ls', 'lms')


# ============================================================================
# Frequency offset estimation
# ============================================================================

def _spectrum(x: np.ndarray, fs: float, window: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Power spectrum with monotonically increasing frequency axis"""
    if np.iscomplexobj(x):
        power = np.abs(np.fft.fftshift(np.fft.fft(x * window))) ** 2
        freqs = np.fft.fftshift(np.fft.fftfreq(x.size, d=1.0 / fs))
    else:
        power = np.abs(np.fft.rfft(x * window)) ** 2
        freqs = np.fft.rfftfreq(x.size, d=1.0 / fs)
    return freqs, power


def _peak_prominence_db(x: np.ndarray, fs: float, band: Tuple[float, float]) -> float:
    """Welch-averaged peak over median PSD inside the band, in dB"""
    nperseg = min(4096, x.size // 8)
    onesided = not np.iscomplexobj(x)
    freqs, psd = signal.welch(x, fs=fs, nperseg=nperseg, detrend=False, return_onesided=onesided)
    if not onesided:
        freqs = np.fft.fftshift(freqs)
        psd = np.fft.fftshift(psd)
    in_band = psd[(freqs >= band[0]) & (freqs <= band[1])]
    if in_band.size == 0:
        raise ValidationError(f"Search band {band} contains no Welch bins")
    peak = float(np.max(in_band))
    if peak <= 0.0:
        return -math.inf
    median = float(np.median(in_band))
    if median <= 0.0:
        return math.inf
    return 10.0 * math.log10(peak / median)


def estimate_frequency_offset(trace: Waveform, search_band: Tuple[float, float],
                              min_peak_db: float = 10.0) -> float:
    """
    Frequency of the strongest tone inside search_band.

    Gaussian-windowed periodogram peak refined by a parabola through the log
    power of the peak bin and its neighbours. Fails when the peak does not
    stand min_peak_db above the median PSD of the band.
    """
    n = len(trace)
    if n < MIN_FOE_SAMPLES:
        raise ValidationError(f"FOE needs at least {MIN_FOE_SAMPLES} samples, got {n}")
    lo, hi = search_band
    if not lo < hi:
        raise ValidationError(f"Empty search band {search_band}")

    fs = trace.sample_rate
    x = trace.samples
    prominence = _peak_prominence_db(x, fs, search_band)
    if prominence < min_peak_db:
        raise EstimationFailure(
            f"No tone in [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz: peak {prominence:.1f} dB above median")

    window = signal.windows.gaussian(n, std=n / 8.0, sym=False)
    freqs, power = _spectrum(x, fs, window)
    idx = np.nonzero((freqs >= lo) & (freqs <= hi))[0]
    if idx.size < 3:
        raise ValidationError(f"Search band {search_band} is narrower than three bins")
    k = int(idx[np.argmax(power[idx])])
    if k == 0 or k == power.size - 1:
        raise EstimationFailure("Spectral peak sits on the edge of the spectrum")

    tiny = np.finfo(float).tiny
    a, b, c = np.log(np.maximum(power[k - 1:k + 2], tiny))
    curvature = a - 2.0 * b + c
    delta = 0.0 if curvature == 0.0 else 0.5 * (a - c) / curvature
    bin_width = fs / n
    f_hat = float(freqs[k] + delta * bin_width)
    logger.debug("FOE peak at %.6f MHz (offset %.3f bins, %.1f dB prominence)", f_hat / 1e6, delta, prominence)
    return f_hat


# ============================================================================
# Downconversion and phase recovery
# ============================================================================

def downconvert_branch(trace: Waveform, f_center: float, bandwidth: float) -> Waveform:
    """
    Isolate the band around f_center and shift it to DC.

    Real traces keep only the side at f_center (its sign selects the side)
    and are doubled so the result equals the analytic field.
    """
    band = ideal_bandpass(trace, f_center, bandwidth, keep_mirror=False)
    x = band.samples
    if not trace.is_complex:
        x = 2.0 * x
    n = np.arange(x.size)
    baseband = x * np.exp(-2j * np.pi * f_center * n / trace.sample_rate)
    return trace.with_samples(baseband, center_frequency_hint=0.0)


@dataclass
class PhaseTrajectory:
    phase: np.ndarray
    sample_rate: float
    smoothing_window: int
    snr_db: float
    low_confidence: bool


def estimate_phase(pilot_bb: Waveform, smoothing_window: int = 64,
                   min_snr_db: float = 10.0) -> PhaseTrajectory:
    """
    Unwrapped pilot phase smoothed by a centred moving average.

    An even window is widened by one sample to keep the average centred.
    The ends are extended by odd reflection, so linear phase ramps pass
    through unchanged.
    """
    if smoothing_window < 1:
        raise ValidationError(f"Smoothing window must be >= 1, got {smoothing_window}")
    x = pilot_bb.samples
    if not np.iscomplexobj(x):
        raise ValidationError("Pilot baseband must be complex")

    raw = np.unwrap(np.angle(x))
    window = smoothing_window | 1
    half = window // 2
    if half and raw.size > half:
        padded = np.pad(raw, half, mode='reflect', reflect_type='odd')
        phase = uniform_filter1d(padded, size=window, mode='nearest')[half:half + raw.size]
    else:
        phase = raw

    magnitude = np.abs(x)
    spread = float(np.var(magnitude))
    mean_mag = float(np.mean(magnitude))
    if spread == 0.0:
        snr_db = math.inf if mean_mag > 0 else -math.inf
    elif mean_mag == 0.0:
        snr_db = -math.inf
    else:
        snr_db = 10.0 * math.log10(mean_mag ** 2 / (2.0 * spread))
    low = snr_db < min_snr_db
    if low:
        logger.warning("Pilot SNR %.1f dB is below %.1f dB; phase estimate is low confidence", snr_db, min_snr_db)
    return PhaseTrajectory(phase, pilot_bb.sample_rate, window, snr_db, low)


def compensate_phase(quantum_bb: Waveform, trajectory: PhaseTrajectory) -> Waveform:
    if len(quantum_bb) != trajectory.phase.size:
        raise ValidationError(
            f"Phase trajectory length {trajectory.phase.size} differs from signal length {len(quantum_bb)}")
    if quantum_bb.sample_rate != trajectory.sample_rate:
        raise ValidationError("Phase trajectory and signal sample rates differ")
    return quantum_bb.with_samples(quantum_bb.field() * np.exp(-1j * trajectory.phase))


# ============================================================================
# Matched filter and training sync
# ============================================================================

def _rate_ratio(fs_in: float, fs_out: float) -> Tuple[int, int]:
    ratio = Fraction(fs_out / fs_in).limit_denominator(1000)
    if not math.isclose(float(ratio), fs_out / fs_in, rel_tol=1e-9):
        raise ValidationError(f"Rate change {fs_in} -> {fs_out} is not a small rational")
    return ratio.numerator, ratio.denominator


def matched_filter_and_sync(baseband: Waveform, rolloff: float, target_sps: int,
                            pattern: TrainingPattern, span_symbols: int = 32,
                            max_delay_symbols: int = 64, min_confidence: float = 0.7) -> SymbolFrame:
    """
    Resample to target_sps, apply the RRC matched filter and find the frame.

    Every sample phase and every delay up to max_delay_symbols is correlated
    against the known training. Confidence is 1 - (largest peak more than two
    symbols away) / (main peak). The output is scaled by the transmit/receive
    RRC cascade gain so an ideal link returns the transmitted symbols.
    """
    rs = baseband.symbol_rate
    if rs is None:
        raise ValidationError("Baseband waveform carries no symbol rate")
    if max_delay_symbols < 0:
        raise ValidationError(f"Maximum delay must be >= 0, got {max_delay_symbols}")
    fs_in = baseband.sample_rate
    sps_in = fs_in / rs
    if not math.isclose(sps_in, round(sps_in), rel_tol=1e-9):
        raise ValidationError(f"Input rate {fs_in} is not an integer multiple of the symbol rate {rs}")

    up, down = _rate_ratio(fs_in, target_sps * rs)
    resampled = resample(baseband, up, down)
    taps = design_rrc(rolloff, span_symbols, target_sps)
    gain = rrc_cascade_gain(rolloff, span_symbols, int(round(sps_in)), target_sps)
    filtered = fftconvolve(resampled.field(), taps, mode='same') / gain

    n_total = pattern.n_total
    needed = target_sps * (n_total + max_delay_symbols)
    y = np.zeros(max(needed, filtered.size), dtype=np.complex128)
    y[:filtered.size] = filtered

    ref = pattern.reference()
    mags = np.empty((target_sps, max_delay_symbols + 1))
    for phase in range(target_sps):
        z = y[phase::target_sps][:n_total + max_delay_symbols]
        mags[phase] = np.abs(signal.correlate(z, ref, mode='valid', method='fft'))

    best_phase, best_lag = np.unravel_index(int(np.argmax(mags)), mags.shape)
    main = float(mags[best_phase, best_lag])
    offsets = np.arange(max_delay_symbols + 1)[None, :] * target_sps + np.arange(target_sps)[:, None]
    best_offset = int(best_lag * target_sps + best_phase)
    far = np.abs(offsets - best_offset) > 2 * target_sps
    secondary = float(np.max(mags[far])) if np.any(far) else 0.0
    confidence = 0.0 if main <= 0.0 else 1.0 - secondary / main

    if confidence < min_confidence:
        raise SyncFailure(f"Sync confidence {confidence:.3f} below threshold {min_confidence}")

    symbols = y[best_offset:best_offset + target_sps * n_total:target_sps]
    logger.debug("Sync at offset %d samples (confidence %.3f)", best_offset, confidence)
    return SymbolFrame(symbols, pattern.roles(), rs, pattern=pattern, diagnostics={
        'sync_offset_samples': best_offset,
        'start_symbol': int(best_lag),
        'sample_phase': int(best_phase),
        'sync_confidence': confidence,
        'input_sample_rate': fs_in,
        'mf_sample_rate': resampled.sample_rate,
        'mf_tap_energy': float(np.sum(taps ** 2)),
        'cascade_gain': gain
    })


# ============================================================================
# Equalizer
# ============================================================================

@dataclass
class EqualizerResult:
    """Taps are (2, 2*num_taps): rows give I and Q outputs; columns are I taps then Q taps"""
    taps: np.ndarray
    num_taps: int
    mode: str
    regularized: bool
    condition_number: float
    kept_taps: int
    mse_before: float
    mse_after: float
    noise_gain: float

    def to_dict(self) -> dict:
        return {
            'num_taps': self.num_taps,
            'mode': self.mode,
            'regularized': self.regularized,
            'condition_number': self.condition_number,
            'kept_taps': self.kept_taps,
            'mse_before': self.mse_before,
            'mse_after': self.mse_after,
            'noise_gain': self.noise_gain
        }


def _regressors(yx: np.ndarray, yp: np.ndarray, positions: np.ndarray, num_taps: int) -> np.ndarray:
    half = num_taps // 2
    px = np.pad(yx, half)
    pp = np.pad(yp, half)
    idx = positions[:, None] + np.arange(num_taps)[None, :]
    return np.hstack([px[idx], pp[idx]])


def _solve_normal(a: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, bool]:
    gram = a.T @ a
    rhs = a.T @ d
    cond = float(np.linalg.cond(gram))
    regularized = not math.isfinite(cond) or cond > COND_LIMIT
    if regularized:
        ridge = max(1e-9 * float(np.trace(gram)) / gram.shape[0], 1e-12)
        gram = gram + ridge * np.eye(gram.shape[0])
    w = scipy.linalg.solve(gram, rhs, assume_a='pos')
    return w, gram, cond, regularized


def _fit_row(a: np.ndarray, d: np.ndarray, center: int, prune_z: Optional[float]):
    w, gram, cond, regularized = _solve_normal(a, d)
    keep = np.ones(w.size, dtype=bool)
    dof = a.shape[0] - a.shape[1]
    if prune_z and dof > 0:
        resid = d - a @ w
        s2 = float(resid @ resid) / dof
        se = np.sqrt(s2 * np.diag(scipy.linalg.inv(gram)))
        keep = np.abs(w) >= prune_z * se
        keep[center] = True
        if not np.all(keep):
            w_kept, _, cond, reg_kept = _solve_normal(a[:, keep], d)
            regularized = regularized or reg_kept
            w = np.zeros_like(w)
            w[keep] = w_kept
    return w, keep, cond, regularized


def apply_equalizer(frame: SymbolFrame, taps: np.ndarray) -> np.ndarray:
    num_taps = taps.shape[1] // 2
    yx = frame.symbols.real
    yp = frame.symbols.imag
    rows = []
    for row in taps:
        rows.append(np.convolve(yx, row[:num_taps][::-1], mode='same')
                    + np.convolve(yp, row[num_taps:][::-1], mode='same'))
    return rows[0] + 1j * rows[1]


def equalize(frame: SymbolFrame, pattern: TrainingPattern, num_taps: int = 21, mode: str = 'ls',
             prune_z: Optional[float] = 4.0, preserve_noise_scale: bool = False,
             lms_step: float = 0.01, lms_passes: int = 4) -> SymbolFrame:
    """
    Train a T-spaced 2x2 real MIMO filter on the training symbols and apply it.

    'ls' solves least squares for each output quadrature, then drops taps
    whose magnitude is under prune_z standard errors (the centre tap of each
    quadrature's own input always stays) and refits. The training error
    never exceeds that of the unequalized input. With preserve_noise_scale
    the taps are divided by the root of their average noise gain so white
    noise keeps its variance.
    """
    if mode not in EQUALIZER_MODES:
        raise ValidationError(f"Equalizer mode must be one of {EQUALIZER_MODES}, got '{mode}'")
    if num_taps < 1 or num_taps % 2 == 0:
        raise ValidationError(f"Equalizer length must be odd and positive, got {num_taps}")
    if len(frame) != pattern.n_total:
        raise ValidationError(f"Frame length {len(frame)} does not match training layout {pattern.n_total}")
    if pattern.n_training < 4 * num_taps:
        raise ValidationError(
            f"{pattern.n_training} training symbols cannot train {num_taps} taps (need {4 * num_taps})")

    positions = pattern.positions
    ref = pattern.symbols
    yx = frame.symbols.real.copy()
    yp = frame.symbols.imag.copy()
    half = num_taps // 2
    mse_before = float(np.mean(np.abs(frame.symbols[positions] - ref) ** 2))

    if mode == 'ls':
        a = _regressors(yx, yp, positions, num_taps)
        row_x, keep_x, cond_x, reg_x = _fit_row(a, ref.real, half, prune_z)
        row_p, keep_p, cond_p, reg_p = _fit_row(a, ref.imag, num_taps + half, prune_z)
        taps = np.vstack([row_x, row_p])
        cond = max(cond_x, cond_p)
        regularized = reg_x or reg_p
        kept = int(np.sum(keep_x) + np.sum(keep_p))
    else:
        taps = np.zeros((2, 2 * num_taps))
        taps[0, half] = 1.0
        taps[1, num_taps + half] = 1.0
        dx = np.zeros(yx.size)
        dp = np.zeros(yx.size)
        dx[positions] = ref.real
        dp[positions] = ref.imag
        taps, _ = nlms_train(yx, yp, dx, dp, positions.astype(np.int64), num_taps,
                             float(lms_step), int(lms_passes), taps)
        cond = float('nan')
        regularized = False
        kept = 4 * num_taps

    if regularized:
        logger.warning("Equalizer normal equations ill-conditioned (cond %.3g); ridge applied", cond)

    out = apply_equalizer(frame, taps)
    mse_after = float(np.mean(np.abs(out[positions] - ref) ** 2))
    noise_gain = 0.5 * float(np.sum(taps ** 2))
    if preserve_noise_scale and noise_gain > 0.0:
        out = out / math.sqrt(noise_gain)

    result = EqualizerResult(taps, num_taps, mode, regularized, cond, kept, mse_before, mse_after, noise_gain)
    diagnostics = dict(frame.diagnostics)
    diagnostics['equalizer'] = result
    return SymbolFrame(out, frame.roles.copy(), frame.symbol_rate, pattern=pattern, diagnostics=diagnostics)


# ============================================================================
# Quality metrics
# ============================================================================

def evm(received: np.ndarray, reference: np.ndarray, fit_gain: bool = False) -> float:
    """RMS error vector magnitude relative to the reference RMS"""
    received = np.asarray(received)
    reference = np.asarray(reference)
    if received.shape != reference.shape or received.size == 0:
        raise ValidationError("EVM needs two non-empty arrays of equal shape")
    if fit_gain:
        reference = reference * (np.vdot(reference, received) / np.vdot(reference, reference))
    power = float(np.mean(np.abs(reference) ** 2))
    if power == 0.0:
        raise ValidationError("EVM reference has zero power")
    return math.sqrt(float(np.mean(np.abs(received - reference) ** 2)) / power)


def training_phase_variance(frame: SymbolFrame, pattern: TrainingPattern, block: int = 256) -> float:
    """Variance of the per-block rotation between received and known training"""
    if block < 1:
        raise ValidationError(f"Block size must be >= 1, got {block}")
    rx = frame.symbols[pattern.positions]
    n_blocks = rx.size // block
    if n_blocks < 2:
        raise ValidationError(f"{rx.size} training symbols give fewer than two blocks of {block}")
    prod = (rx[:n_blocks * block] * np.conj(pattern.symbols[:n_blocks * block])).reshape(n_blocks, block)
    phases = np.unwrap(np.angle(prod.sum(axis=1)))
    return float(np.var(phases))


def data_mask_with_guard(frame: SymbolFrame, guard_symbols: int) -> np.ndarray:
    """Data positions, excluding guard_symbols at each frame edge"""
    mask = frame.mask(SymbolRole.DATA)
    if guard_symbols > 0:
        mask = mask.copy()
        mask[:guard_symbols] = False
        mask[-guard_symbols:] = False
    return mask
