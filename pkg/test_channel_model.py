#!/usr/bin/env python3
"""
Tests for the channel and detector model
"""

import math

import numpy as np
import pytest

from channel_model import (
    ChannelParams, ReceiverParams, aom_gate, apply_channel, detection_efficiency,
    electronic_noise_from_clearance, fiber_transmittance, heterodyne_detect, wiener_phase
)
from qkd_errors import ValidationError
from signal_core import RngStream, Waveform
from tx_dsp import SlotKind, build_frame_schedule


def test_detection_efficiency_matches_operating_point():
    eta = detection_efficiency(ReceiverParams())
    assert 0.2265 <= eta <= 0.2275
    assert abs(eta - 0.2270) < 2e-4


def test_improved_receiver_is_more_efficient():
    assert detection_efficiency(ReceiverParams.improved()) > 2 * detection_efficiency(ReceiverParams())


def test_fiber_transmittance():
    assert fiber_transmittance(0.0) == 1.0
    assert math.isclose(fiber_transmittance(50.0, 0.2), 0.1, rel_tol=1e-12)
    t = fiber_transmittance(28.6, 0.2, 5.0)
    assert math.isclose(t, 10 ** (-1.072), rel_tol=1e-12)
    with pytest.raises(ValidationError):
        fiber_transmittance(-1.0)


def test_electronic_noise_from_clearance():
    v_el = electronic_noise_from_clearance(7.42, 'total')
    assert abs(v_el - 0.2212) < 5e-4
    assert abs(v_el / (1 + v_el) - 0.1812) / 0.1812 < 0.02
    assert math.isclose(electronic_noise_from_clearance(10.0, 'shot'), 0.1, rel_tol=1e-12)
    assert electronic_noise_from_clearance(float('inf')) == 0.0
    with pytest.raises(ValidationError):
        electronic_noise_from_clearance(7.42, 'peak')


def test_parameter_validation():
    with pytest.raises(ValidationError):
        ChannelParams(length_km=-1.0)
    with pytest.raises(ValidationError):
        ChannelParams(crosstalk_db=3.0)
    with pytest.raises(ValidationError):
        ReceiverParams(wavelength_nm=800.0)


def test_wiener_phase_increment_variance():
    fs, lw = 5e9, 200.0
    phi = wiener_phase(1 << 20, fs, lw, RngStream(1))
    assert phi[0] == 0.0
    inc = np.diff(phi)
    expected = 2 * math.pi * lw / fs
    assert abs(inc.var() / expected - 1.0) < 0.01
    assert np.all(wiener_phase(10, fs, 0.0, RngStream(1)) == 0.0)


def test_channel_attenuates_and_rotates():
    fs = 5e9
    n = 4096
    q = Waveform(np.ones(n, dtype=complex), fs)
    p = Waveform(np.ones(n, dtype=complex), fs)
    params = ChannelParams(length_km=0.0, untrusted_loss_db=3.0, excess_noise=0.0,
                           cfo_hz=-1e9, combined_linewidth_hz=0.0)
    q_out, p_out = apply_channel(q, p, params, RngStream(1))
    t = np.arange(n) / fs
    expected = math.sqrt(params.transmittance) * np.exp(-2j * np.pi * 1e9 * t)
    assert np.allclose(q_out.samples, expected, atol=1e-9)
    assert np.allclose(p_out.samples, expected, atol=1e-9)
    assert q_out.center_frequency_hint == -1e9


def test_channel_excess_noise_variance():
    n = 1 << 18
    q = Waveform(np.zeros(n, dtype=complex), 5e9)
    params = ChannelParams(length_km=0.0, untrusted_loss_db=0.0, excess_noise=0.05,
                           cfo_hz=0.0, combined_linewidth_hz=0.0)
    q_out, _ = apply_channel(q, q, params, RngStream(2))
    for quad in (q_out.samples.real, q_out.samples.imag):
        assert abs(quad.var() / 0.05 - 1.0) < 0.02


def test_crosstalk_leaks_pilot():
    n = 1024
    q = Waveform(np.zeros(n, dtype=complex), 5e9)
    p = Waveform(np.full(n, 10.0 + 0j), 5e9)
    params = ChannelParams(length_km=0.0, untrusted_loss_db=0.0, excess_noise=0.0,
                           cfo_hz=0.0, combined_linewidth_hz=0.0, crosstalk_db=-20.0)
    q_out, _ = apply_channel(q, p, params, RngStream(4))
    assert np.allclose(np.abs(q_out.samples), 1.0)


def test_aom_gate_blanks_calibration_slots():
    schedule = build_frame_schedule(2000, 0.5, 500)
    w = Waveform(np.ones(2000, dtype=complex), 5e9)
    gated = aom_gate(w, schedule, 50.0)
    cal = schedule.mask(SlotKind.CALIBRATION)
    assert np.allclose(np.abs(gated.samples[cal]) ** 2, 1e-5)
    assert np.all(gated.samples[~cal] == 1.0)


def test_detector_noise_levels():
    n = 1 << 20
    rx = ReceiverParams()
    silent = Waveform(np.zeros(n, dtype=complex), 5e9)
    v_el = rx.electronic_noise

    lo_on, _ = heterodyne_detect(silent, silent, rx, RngStream(5), shot_raw=2.0)
    assert abs(lo_on.samples.var() / (2.0 * (1 + v_el)) - 1.0) < 0.01
    assert not lo_on.is_complex

    lo_off, _ = heterodyne_detect(silent, silent, rx, RngStream(6), shot_raw=2.0, lo_on=False)
    assert abs(lo_off.samples.var() / (2.0 * v_el) - 1.0) < 0.01

    fixed, _ = heterodyne_detect(silent, silent, rx, RngStream(7), shot_raw=3.0, electronic_raw=0.5)
    assert abs(fixed.samples.var() / 3.5 - 1.0) < 0.01


def test_detector_signal_scale_without_noise():
    n = 1000
    rx = ReceiverParams()
    field = Waveform(np.full(n, 2.0 + 1.0j), 5e9)
    q, p = heterodyne_detect(field, field, rx, RngStream(8), eta=0.25, shot_raw=4.0, noise_enabled=False)
    # sqrt(eta * shot_raw) * Re{field} = 1 * 2
    assert np.allclose(q.samples, 2.0)
    assert np.allclose(p.samples, 2.0)


def test_detector_rejects_mismatched_branches():
    rx = ReceiverParams()
    with pytest.raises(ValidationError):
        heterodyne_detect(Waveform(np.zeros(10), 5e9), Waveform(np.zeros(12), 5e9), rx, RngStream(1))
