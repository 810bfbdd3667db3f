#!/usr/bin/env python3
"""
Tests for the receiver chain: FOE, downconversion, phase recovery,
matched filter with training sync, equalizer and quality metrics
"""

import math

import numpy as np
import pytest

from qkd_errors import EstimationFailure, SyncFailure, ValidationError
from rx_dsp import (
    compensate_phase, data_mask_with_guard, downconvert_branch, equalize, estimate_frequency_offset,
    estimate_phase, evm, matched_filter_and_sync, training_phase_variance
)
from signal_core import RngStream, Waveform
from tx_dsp import SymbolFrame, generate_gaussian_symbols, interleave_training, shape_baseband


def _frame(n_data=15_000, v_mod=1.0, seed=1):
    data = generate_gaussian_symbols(n_data, v_mod, RngStream(seed))
    return interleave_training(data, 0.0625, pattern_seed=seed, v_mod=v_mod)


# ============================================================================
# Frequency offset
# ============================================================================

def test_foe_error_below_a_tenth_of_a_bin():
    fs = 5e9
    n = 1 << 14
    gen = RngStream(21, 'foe').generator()
    bin_width = fs / n
    t = np.arange(n) / fs
    noise_std = math.sqrt(0.5 * 10 ** (-30 / 10))
    worst = 0.0
    for _ in range(100):
        f0 = gen.uniform(1.45e9, 1.55e9)
        trace = np.cos(2 * np.pi * f0 * t + gen.uniform(0, 2 * np.pi)) + noise_std * gen.standard_normal(n)
        f_hat = estimate_frequency_offset(Waveform(trace, fs), (1.4e9, 1.6e9))
        worst = max(worst, abs(f_hat - f0) / bin_width)
    print(f"worst FOE error {worst:.4f} bins")
    assert worst < 0.1


def test_foe_on_complex_trace_finds_negative_frequency():
    fs = 5e9
    n = 1 << 15
    t = np.arange(n) / fs
    x = np.exp(-2j * np.pi * 1.5e9 * t)
    f_hat = estimate_frequency_offset(Waveform(x, fs), (-1.6e9, -1.4e9))
    assert abs(f_hat + 1.5e9) < 0.1 * fs / n


def test_foe_rejects_white_noise():
    gen = RngStream(22).generator()
    with pytest.raises(EstimationFailure):
        estimate_frequency_offset(Waveform(gen.standard_normal(1 << 16), 5e9), (1.4e9, 1.6e9))


def test_foe_needs_enough_samples():
    with pytest.raises(ValidationError):
        estimate_frequency_offset(Waveform(np.ones(1000), 5e9), (1.4e9, 1.6e9))


# ============================================================================
# Downconversion and phase
# ============================================================================

def test_downconvert_recovers_field_from_real_trace():
    fs, n = 5e9, 5000
    t = np.arange(n) / fs
    trace = Waveform(np.cos(2 * np.pi * 800e6 * t + 0.4), fs)
    for centre in (800e6, -800e6):
        bb = downconvert_branch(trace, centre, 200e6)
        assert bb.is_complex
        assert bb.center_frequency_hint == 0.0
        assert np.allclose(np.abs(bb.samples), 1.0, atol=1e-9)


def test_phase_estimate_keeps_linear_ramp():
    n = 20_000
    phase = 0.3 + 0.01 * np.arange(n)
    pilot = Waveform(np.exp(1j * phase), 5e9)
    trajectory = estimate_phase(pilot, smoothing_window=64)
    assert trajectory.smoothing_window == 65
    assert np.max(np.abs(trajectory.phase - phase)) < 1e-9
    assert not trajectory.low_confidence


def test_phase_estimate_flags_weak_pilot():
    gen = RngStream(23).generator()
    n = 20_000
    x = 0.1 + (gen.standard_normal(n) + 1j * gen.standard_normal(n)) / math.sqrt(2)
    trajectory = estimate_phase(Waveform(x, 5e9), min_snr_db=10.0)
    assert trajectory.low_confidence
    assert trajectory.snr_db < 10.0


def test_compensation_removes_rotation():
    n = 4096
    phase = 0.002 * np.arange(n) ** 1.1
    signal = np.exp(1j * phase) * 2.0
    pilot = Waveform(np.exp(1j * phase), 5e9)
    trajectory = estimate_phase(pilot, smoothing_window=1)
    out = compensate_phase(Waveform(signal, 5e9), trajectory)
    assert np.allclose(out.samples, 2.0, atol=1e-9)


def test_compensation_checks_lengths():
    trajectory = estimate_phase(Waveform(np.ones(100, dtype=complex), 5e9))
    with pytest.raises(ValidationError):
        compensate_phase(Waveform(np.ones(50, dtype=complex), 5e9), trajectory)


# ============================================================================
# Matched filter and sync
# ============================================================================

def _delayed_baseband(frame, delay_samples, sps=5):
    x = shape_baseband(frame, sps, 0.3)
    y = np.concatenate([np.zeros(delay_samples, dtype=complex), x])[:x.size]
    return Waveform(y, sps * frame.symbol_rate, symbol_rate=frame.symbol_rate, rolloff=0.3)


def test_sync_finds_delay_and_recovers_symbols():
    frame = _frame()
    synced = matched_filter_and_sync(_delayed_baseband(frame, 60), 0.3, 4, frame.pattern)
    d = synced.diagnostics
    assert d['start_symbol'] == 12
    assert d['sample_phase'] == 0
    assert d['sync_offset_samples'] == 48
    # data symbols leave sidelobes near sqrt(ln(lags) / n_training) of the peak
    assert d['sync_confidence'] > 0.85
    assert d['mf_sample_rate'] == 4e9

    core = slice(64, len(frame) - 64)
    err = synced.symbols[core] - frame.symbols[core]
    rms = math.sqrt(np.mean(np.abs(err) ** 2))
    # RRC truncation at 32 symbols and the 5:4 resampler set the floor
    assert rms < 2e-3
    assert rms / math.sqrt(np.mean(np.abs(frame.symbols[core]) ** 2)) < 2e-3


def test_sync_confidence_grows_with_training_length():
    def confidence(frame):
        synced = matched_filter_and_sync(_delayed_baseband(frame, 0), 0.3, 4, frame.pattern)
        return synced.diagnostics['sync_confidence']

    conf_short = confidence(_frame())
    conf_long = confidence(_frame(n_data=60_000))
    print(f"confidence {conf_short:.4f} short, {conf_long:.4f} long")
    assert conf_long > 0.9
    assert conf_long > conf_short


def test_sync_fails_on_noise():
    frame = _frame()
    gen = RngStream(24).generator()
    n = 5 * len(frame)
    noise = Waveform(gen.standard_normal(n) + 1j * gen.standard_normal(n), 5e9,
                     symbol_rate=1e9, rolloff=0.3)
    with pytest.raises(SyncFailure):
        matched_filter_and_sync(noise, 0.3, 4, frame.pattern)


def test_sync_requires_symbol_rate():
    frame = _frame()
    with pytest.raises(ValidationError):
        matched_filter_and_sync(Waveform(np.ones(5 * len(frame), dtype=complex), 5e9), 0.3, 4, frame.pattern)


# ============================================================================
# Equalizer
# ============================================================================

def _isi_frame(frame, seed=25):
    gen = RngStream(seed).generator()
    x = frame.symbols
    y = x + 0.3 * np.roll(x, 1)
    y = y + 0.01 * (gen.standard_normal(x.size) + 1j * gen.standard_normal(x.size))
    return SymbolFrame(y, frame.roles, frame.symbol_rate, pattern=frame.pattern)


def test_ls_equalizer_removes_isi():
    frame = _frame()
    received = _isi_frame(frame)
    out = equalize(received, frame.pattern, num_taps=21, mode='ls')
    result = out.diagnostics['equalizer']
    assert result.mse_after < 0.1 * result.mse_before
    assert not result.regularized
    data = frame.mask(0)
    assert evm(out.symbols[data], frame.symbols[data]) < 0.05


def test_equalizer_corrects_iq_imbalance():
    frame = _frame()
    gen = RngStream(27).generator()
    x = frame.symbols
    skew = math.radians(5.0)
    y = 1.1 * x.real + 1j * (x.imag * math.cos(skew) + x.real * math.sin(skew))
    y = y + 0.01 * (gen.standard_normal(x.size) + 1j * gen.standard_normal(x.size))
    received = SymbolFrame(y, frame.roles, frame.symbol_rate, pattern=frame.pattern)
    out = equalize(received, frame.pattern, num_taps=21)
    train = frame.pattern.positions
    before = evm(y[train], x[train])
    after = evm(out.symbols[train], x[train])
    assert after < 0.5 * before


def test_ls_equalizer_prunes_insignificant_taps():
    frame = _frame()
    gen = RngStream(26).generator()
    y = frame.symbols + 0.05 * (gen.standard_normal(len(frame)) + 1j * gen.standard_normal(len(frame)))
    received = SymbolFrame(y, frame.roles, frame.symbol_rate, pattern=frame.pattern)
    result = equalize(received, frame.pattern, num_taps=21).diagnostics['equalizer']
    assert result.kept_taps < 10
    assert abs(result.taps[0, 10] - 1.0) < 0.01
    assert abs(result.taps[1, 31] - 1.0) < 0.01


def test_equalizer_noise_scale_preservation():
    frame = _frame()
    received = SymbolFrame(2.0 * frame.symbols, frame.roles, frame.symbol_rate, pattern=frame.pattern)
    out = equalize(received, frame.pattern, num_taps=21, preserve_noise_scale=True)
    # taps of 0.5 have noise gain 0.25; rescaling restores the input scale
    assert np.allclose(np.abs(out.symbols), np.abs(received.symbols), rtol=1e-3)


def test_lms_equalizer_reduces_error():
    frame = _frame()
    received = _isi_frame(frame)
    result = equalize(received, frame.pattern, num_taps=21, mode='lms',
                      lms_step=0.1, lms_passes=8).diagnostics['equalizer']
    assert result.mse_after < 0.5 * result.mse_before
    assert result.mode == 'lms'


def test_equalizer_argument_checks():
    frame = _frame()
    with pytest.raises(ValidationError):
        equalize(frame, frame.pattern, num_taps=20)
    with pytest.raises(ValidationError):
        equalize(frame, frame.pattern, mode='rls')
    with pytest.raises(ValidationError):
        equalize(frame, frame.pattern, num_taps=301)


# ============================================================================
# Metrics
# ============================================================================

def test_evm_definitions():
    ref = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])
    assert evm(ref, ref) == 0.0
    assert math.isclose(evm(1.1 * ref, ref), 0.1, rel_tol=1e-12)
    assert evm(1.1 * ref, ref, fit_gain=True) < 1e-12
    with pytest.raises(ValidationError):
        evm(ref, ref[:2])


def test_training_phase_variance_of_constant_rotation_is_zero():
    frame = _frame()
    rotated = SymbolFrame(frame.symbols * np.exp(0.2j), frame.roles, frame.symbol_rate, pattern=frame.pattern)
    assert training_phase_variance(rotated, frame.pattern, block=256) < 1e-20

    drift = np.exp(1j * 1e-4 * np.arange(len(frame)))
    drifting = SymbolFrame(frame.symbols * drift, frame.roles, frame.symbol_rate, pattern=frame.pattern)
    assert training_phase_variance(drifting, frame.pattern, block=256) > 1e-3


def test_guard_mask_drops_edges():
    frame = _frame()
    mask = data_mask_with_guard(frame, 16)
    assert not mask[:16].any() and not mask[-16:].any()
    assert mask.sum() == frame.mask(0)[16:-16].sum()
