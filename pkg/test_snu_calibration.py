#!/usr/bin/env python3
"""
Tests for shot-noise calibration and noise normalization
"""

import math

import numpy as np
import pytest

from channel_model import ReceiverParams, aom_gate, heterodyne_detect
from qkd_errors import CalibrationFailure, ValidationError
from signal_core import RngStream, Waveform
from snu_calibration import (
    CalibrationRecord, calibrate_snu, dsp_noise_gain, measure_clearance, merge_records,
    normalize_symbols, psd_flatness_db
)
from tx_dsp import SlotKind, SymbolFrame, build_frame_schedule

FS = 5e9
N = 1 << 20


def _traces(shot_raw=1.0, seed=1):
    rx = ReceiverParams()
    silent = Waveform(np.zeros(N, dtype=complex), FS)
    elec, _ = heterodyne_detect(silent, silent, rx, RngStream(seed, 'elec'), shot_raw=shot_raw, lo_on=False)
    gated, _ = heterodyne_detect(silent, silent, rx, RngStream(seed, 'gated'), shot_raw=shot_raw)
    return rx, elec, gated


def test_calibration_recovers_shot_noise_floor():
    rx, elec, gated = _traces()
    schedule = build_frame_schedule(N, 0.5, 1 << 16)
    record = calibrate_snu(elec, gated, schedule, slot_prefix='f0:')
    v_el = rx.electronic_noise
    assert abs(record.snu_scale / (1 + v_el) - 1.0) < 0.01
    assert abs(record.electronic_share - 0.1812) / 0.1812 < 0.02
    assert record.slot_ids[0] == 'f0:1'
    assert not record.nominal

    # normalized calibration slots sit at unit variance
    floor = np.var(schedule.samples_of(gated.samples, SlotKind.CALIBRATION) / math.sqrt(record.snu_scale))
    assert abs(floor - 1.0) < 0.01


def test_calibration_tracks_lo_power():
    _, elec, _ = _traces(shot_raw=1.0, seed=2)
    rx = ReceiverParams()
    silent = Waveform(np.zeros(N, dtype=complex), FS)
    gated, _ = heterodyne_detect(silent, silent, rx, RngStream(2, 'gated'), shot_raw=1.2,
                                 electronic_raw=rx.electronic_noise)
    schedule = build_frame_schedule(N, 0.5, 1 << 16)
    record = calibrate_snu(elec, gated, schedule)
    assert abs(record.snu_scale / (1.2 + rx.electronic_noise) - 1.0) < 0.01


def test_calibration_ignores_signal_slots():
    rx, elec, gated = _traces(seed=3)
    schedule = build_frame_schedule(N, 0.5, 1 << 16)
    loud = Waveform(gated.samples + 5.0 * ~schedule.mask(SlotKind.CALIBRATION), FS)
    record = calibrate_snu(elec, loud, schedule)
    assert abs(record.snu_scale / (1 + rx.electronic_noise) - 1.0) < 0.01


def test_gated_signal_leaks_only_extinction():
    schedule = build_frame_schedule(4096, 0.5, 1024)
    field = Waveform(np.full(4096, 3.0 + 0j), FS)
    gated = aom_gate(field, schedule, 50.0)
    cal = schedule.mask(SlotKind.CALIBRATION)
    assert np.max(np.abs(gated.samples[cal]) ** 2) < 9.0 * 1e-5 * 1.0001


def test_calibration_without_clearance_fails():
    gen = RngStream(4).generator()
    elec = Waveform(gen.standard_normal(N), FS)
    gated = Waveform(0.5 * gen.standard_normal(N), FS)
    schedule = build_frame_schedule(N, 0.5, 1 << 16)
    with pytest.raises(CalibrationFailure):
        calibrate_snu(elec, gated, schedule)


def test_calibration_checks_schedule():
    _, elec, gated = _traces(seed=5)
    with pytest.raises(ValidationError):
        calibrate_snu(elec, gated, build_frame_schedule(N // 2, 0.5, 1 << 16))
    with pytest.raises(ValidationError):
        calibrate_snu(elec, gated, build_frame_schedule(N, 0.0, 0))


def test_record_from_model_and_merge():
    record = CalibrationRecord.from_model(2.0, 0.25)
    assert record.nominal
    assert math.isclose(record.snu_scale, 2.5)
    assert math.isclose(record.electronic_share, 0.2)
    assert math.isclose(record.electronic_noise_snu, 0.25)
    assert math.isclose(record.transfer_factor, 0.8)

    merged = merge_records([CalibrationRecord(0.2, 1.2, ['a']), CalibrationRecord(0.4, 1.4, ['b'])])
    assert math.isclose(merged.v_elec_raw, 0.3)
    assert math.isclose(merged.v_total_raw, 1.3)
    assert merged.slot_ids == ['a', 'b']
    assert not merged.nominal
    assert CalibrationRecord.from_dict(merged.to_dict()) == merged
    with pytest.raises(ValidationError):
        merge_records([])


def test_dsp_noise_gain_for_real_trace():
    gain = dsp_noise_gain(5e9, 4e9, 1.0, math.sqrt(0.8))
    assert math.isclose(gain, 2.0, rel_tol=1e-12)
    assert math.isclose(dsp_noise_gain(5e9, 4e9, 1.0, math.sqrt(0.8), analytic=False), 1.0, rel_tol=1e-12)
    with pytest.raises(ValidationError):
        dsp_noise_gain(0.0, 4e9, 1.0)


def test_normalize_symbols_divides_by_scale():
    frame = SymbolFrame(np.full(16, 4.0 + 0j), np.zeros(16, dtype=np.int8), 1e9)
    out = normalize_symbols(frame, CalibrationRecord(0.0, 2.0), 2.0)
    assert np.allclose(out.symbols, 2.0)
    assert out.diagnostics['snu_scale'] == 2.0
    with pytest.raises(ValidationError):
        normalize_symbols(frame, CalibrationRecord(0.0, 2.0), 0.0)


def test_clearance_of_simulated_detector():
    rx, elec, gated = _traces(seed=6)
    clearance = measure_clearance(elec, gated)
    assert abs(clearance - 7.42) < 0.05
    with pytest.raises(CalibrationFailure):
        measure_clearance(gated, elec)


def test_detector_noise_is_white():
    _, elec, _ = _traces(seed=7)
    assert psd_flatness_db(elec, band=(100e6, 2.4e9)) < 0.5
    with pytest.raises(ValidationError):
        psd_flatness_db(elec, band=(3e9, 4e9))
