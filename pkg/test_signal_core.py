#!/usr/bin/env python3
"""
Tests for the shared DSP primitives: dB helpers, seeded streams,
Box-Muller, RRC design, ideal band-pass and resampling
"""

import math

import numpy as np
import pytest

from qkd_errors import ValidationError
from signal_core import (
    DecibelValue, RngStream, Waveform, bits_to_uniform, box_muller, db_to_linear, design_rrc,
    ideal_bandpass, linear_to_db, resample, rrc_cascade_gain
)


def tone(freq, fs, n, amplitude=1.0, complex_=False):
    t = np.arange(n) / fs
    if complex_:
        return amplitude * np.exp(2j * np.pi * freq * t)
    return amplitude * np.cos(2 * np.pi * freq * t)


# ============================================================================
# dB helpers
# ============================================================================

def test_db_reference_values():
    assert db_to_linear(0.0) == 1.0
    assert math.isclose(db_to_linear(10.0), 10.0, rel_tol=1e-15)
    assert math.isclose(db_to_linear(-3.0103), 0.5, rel_tol=1e-5)
    assert math.isclose(db_to_linear(DecibelValue(20.0)), 100.0, rel_tol=1e-15)


def test_db_round_trip():
    for x in np.linspace(-100.0, 100.0, 401):
        back = float(linear_to_db(db_to_linear(x)))
        assert abs(back - x) <= 1e-12 * max(abs(x), 1.0)


def test_db_rejects_non_finite():
    with pytest.raises(ValidationError):
        DecibelValue(float('inf'))
    with pytest.raises(ValidationError):
        linear_to_db(0.0)
    with pytest.raises(ValidationError):
        db_to_linear(float('nan'))


# ============================================================================
# Randomness
# ============================================================================

def test_rng_stream_replays():
    a = RngStream(7, 3).generator().standard_normal(1000)
    b = RngStream(7, 3).generator().standard_normal(1000)
    assert np.array_equal(a, b)


def test_rng_streams_are_independent():
    a = RngStream(7, 0).generator().standard_normal(200_000)
    b = RngStream(7, 1).generator().standard_normal(200_000)
    c = RngStream(7, 0).child('x').generator().standard_normal(200_000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.01


def test_named_and_numbered_streams_are_stable():
    assert RngStream(1, 'frame').child(2) == RngStream(1, 'frame').child(2)
    assert RngStream(1, 'frame').child(2) != RngStream(1, 'frame').child(3)


def test_words_stay_in_range():
    words = RngStream(5).words(10_000, bits=16)
    assert words.min() >= 0
    assert words.max() < 1 << 16


def test_bits_to_uniform_intervals():
    words = np.array([0, 1, 65535])
    low = bits_to_uniform(words, 16, 'open_low')
    high = bits_to_uniform(words, 16, 'open_high')
    assert low[0] > 0.0 and low[-1] == 1.0
    assert high[0] == 0.0 and high[-1] < 1.0
    with pytest.raises(ValidationError):
        bits_to_uniform(np.array([65536]), 16)


# ============================================================================
# Box-Muller
# ============================================================================

def test_box_muller_reference_points():
    z1, z2 = box_muller(math.exp(-0.5), 0.0)
    assert math.isclose(z1, 1.0, abs_tol=1e-12)
    assert abs(z2) < 1e-12

    z1, z2 = box_muller(1.0, 0.25)
    assert abs(z1) < 1e-12 and abs(z2) < 1e-12


def test_box_muller_rejects_zero():
    with pytest.raises(ValidationError):
        box_muller(0.0, 0.5)


def test_box_muller_statistics():
    gen = RngStream(11, 'box-muller').generator()
    u1 = 1.0 - gen.random(1_000_000)
    u2 = gen.random(1_000_000)
    z1, z2 = box_muller(u1, u2)
    for z in (z1, z2):
        assert abs(z.mean()) < 0.005
        assert 0.99 <= z.var() <= 1.01
    assert abs(np.corrcoef(z1, z2)[0, 1]) < 0.005


# ============================================================================
# RRC
# ============================================================================

def test_rrc_is_symmetric_and_unit_energy():
    taps = design_rrc(0.3, 32, 4)
    assert taps.size == 32 * 4 + 1
    assert np.allclose(taps, taps[::-1], atol=1e-15)
    assert abs(np.sum(taps ** 2) - 1.0) < 1e-9


def test_rrc_singularity_is_finite():
    # rolloff 0.25 puts t = 1/(4*beta) = 1 symbol on the sample grid
    taps = design_rrc(0.25, 16, 4)
    assert np.all(np.isfinite(taps))


def test_rrc_cascade_meets_nyquist_isi():
    sps = 4
    taps = design_rrc(0.3, 32, sps)
    cascade = np.convolve(taps, taps)
    centre = cascade.size // 2
    symbol_spaced = cascade[centre % sps::sps]
    k = centre // sps
    assert math.isclose(symbol_spaced[k], 1.0, rel_tol=1e-9)
    assert np.max(np.abs(np.delete(symbol_spaced, k))) < 1e-3


def test_rrc_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        design_rrc(0.0, 32, 4)
    with pytest.raises(ValidationError):
        design_rrc(0.3, 31, 4)
    with pytest.raises(ValidationError):
        design_rrc(0.3, 32, 1)


def test_cascade_gain_between_rates():
    gain = rrc_cascade_gain(0.3, 32, 5, 4)
    assert math.isclose(gain, math.sqrt(4 / 5), rel_tol=1e-3)
    assert math.isclose(rrc_cascade_gain(0.3, 32, 4, 4), 1.0, rel_tol=1e-12)


# ============================================================================
# Ideal band-pass
# ============================================================================

def test_bandpass_passes_in_band_tone():
    fs, n = 5e9, 5000
    x = tone(800e6, fs, n)
    out = ideal_bandpass(Waveform(x, fs), 800e6, 200e6)
    assert not out.is_complex
    assert np.max(np.abs(out.samples - x)) < 1e-9


def test_bandpass_removes_out_of_band_tone():
    fs, n = 5e9, 5000
    x = tone(2e9, fs, n)
    out = ideal_bandpass(Waveform(x, fs), 800e6, 200e6)
    assert np.sqrt(np.mean(out.samples ** 2)) < 1e-9 * np.sqrt(np.mean(x ** 2))


def test_bandpass_keeps_only_in_band_part_of_sum():
    fs, n = 5e9, 5000
    inside = tone(800e6, fs, n)
    outside = tone(2e9, fs, n, 0.7)
    out = ideal_bandpass(Waveform(inside + outside, fs), 800e6, 200e6)
    assert np.allclose(np.fft.fft(out.samples), np.fft.fft(inside), atol=1e-6)


def test_bandpass_is_idempotent():
    gen = RngStream(3).generator()
    w = Waveform(gen.standard_normal(8192), 5e9)
    once = ideal_bandpass(w, 800e6, 1.3e9)
    twice = ideal_bandpass(once, 800e6, 1.3e9)
    assert np.max(np.abs(twice.samples - once.samples)) < 1e-12


def test_bandpass_one_sided_on_real_input():
    fs, n = 5e9, 5000
    x = tone(800e6, fs, n)
    out = ideal_bandpass(Waveform(x, fs), -800e6, 200e6, keep_mirror=False)
    assert out.is_complex
    # one side of a real cosine carries half its amplitude
    assert np.allclose(np.abs(out.samples), 0.5, atol=1e-9)


def test_bandpass_rejects_band_beyond_nyquist():
    with pytest.raises(ValidationError):
        ideal_bandpass(Waveform(np.zeros(128), 5e9), 2.4e9, 400e6)


# ============================================================================
# Resampling
# ============================================================================

def test_resample_identity_is_exact():
    gen = RngStream(4).generator()
    w = Waveform(gen.standard_normal(1000), 5e9)
    out = resample(w, 1, 1)
    assert np.array_equal(out.samples, w.samples)
    assert out.sample_rate == w.sample_rate


def test_resample_preserves_tone_amplitude():
    fs, n = 5e9, 50_000
    f0 = 100e6
    out = resample(Waveform(tone(f0, fs, n, complex_=True), fs), 4, 5)
    assert out.sample_rate == 4e9
    expected = tone(f0, 4e9, len(out), complex_=True)
    core = slice(2000, len(out) - 2000)
    assert np.max(np.abs(out.samples[core] - expected[core])) < 1e-3


def test_resample_up_down_round_trip_keeps_spectrum():
    gen = RngStream(6).generator()
    fs = 1e9
    noise = ideal_bandpass(Waveform(gen.standard_normal(1 << 15), fs), 0.0, 0.8 * fs)
    back = resample(resample(noise, 2, 1), 1, 2)
    assert len(back) == len(noise)
    core = slice(2000, len(noise) - 2000)
    err = np.std(back.samples[core] - noise.samples[core]) / np.std(noise.samples[core])
    assert err < 1e-3


def test_resample_rejects_non_coprime():
    with pytest.raises(ValidationError):
        resample(Waveform(np.zeros(100), 1e9), 4, 2)


# ============================================================================
# Waveform container
# ============================================================================

def test_waveform_validation():
    with pytest.raises(ValidationError):
        Waveform(np.zeros(0), 1e9)
    with pytest.raises(ValidationError):
        Waveform(np.zeros(10), 0.0)


def test_waveform_occupied_band_and_padding():
    w = Waveform(np.ones(10), 5e9, center_frequency_hint=750e6, symbol_rate=1e9, rolloff=0.3)
    assert w.occupied_band() == pytest.approx((100e6, 1400e6))
    padded = w.padded(16)
    assert len(padded) == 16 and padded.samples[10:].sum() == 0
    assert padded.symbol_rate == 1e9
