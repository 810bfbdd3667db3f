#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
SNU Calibration - shot-noise units from gated calibration slots

The scale is the total noise variance (shot + electronic) in the slots where
the AOM blocks the quantum signal. The electronic share is measured once with
the LO off and is treated as trusted receiver noise.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import signal

from qkd_errors import CalibrationFailure, ValidationError
from signal_core import Waveform
from tx_dsp import FrameSchedule, SlotKind, SymbolFrame

logger = logging.getLogger(__name__)


@dataclass
class CalibrationRecord:
    v_elec_raw: float
    v_total_raw: float
    slot_ids: List[str] = field(default_factory=list)
    nominal: bool = False

    @property
    def snu_scale(self) -> float:
        return self.v_total_raw

    @property
    def electronic_share(self) -> float:
        """Electronic fraction of the total noise, v_el / (1 + v_el)"""
        return self.v_elec_raw / self.v_total_raw

    @property
    def electronic_noise_snu(self) -> float:
        """Electronic noise relative to shot noise"""
        shot = self.v_total_raw - self.v_elec_raw
        return self.v_elec_raw / shot

    @property
    def transfer_factor(self) -> float:
        """Signal scale lost by normalizing to shot + electronic, 1 / (1 + v_el)"""
        return 1.0 - self.electronic_share

    @classmethod
    def from_model(cls, shot_raw: float, v_el: float) -> 'CalibrationRecord':
        """Record implied by the detector model, used when detector noise is switched off"""
        return cls(shot_raw * v_el, shot_raw * (1.0 + v_el), ['nominal'], nominal=True)

    def to_dict(self) -> dict:
        return {
            'v_elec_raw': self.v_elec_raw,
            'v_total_raw': self.v_total_raw,
            'snu_scale': self.snu_scale,
            'electronic_share': self.electronic_share,
            'slot_ids': list(self.slot_ids),
            'nominal': self.nominal
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CalibrationRecord':
        return cls(float(data['v_elec_raw']), float(data['v_total_raw']),
                   list(data.get('slot_ids', [])), bool(data.get('nominal', False)))


def calibrate_snu(elec_trace: Waveform, gated_trace: Waveform, schedule: FrameSchedule,
                  slot_prefix: str = '') -> CalibrationRecord:
    """
    Measure the shot-noise scale from the calibration slots of gated_trace.

    elec_trace is a one-time LO-off capture.
    """
    if len(gated_trace) != schedule.total_samples:
        raise ValidationError(
            f"Gated trace length {len(gated_trace)} does not match schedule length {schedule.total_samples}")
    cal_slots = schedule.slots_of(SlotKind.CALIBRATION)
    if not cal_slots:
        raise ValidationError("Schedule has no calibration slots")

    v_elec = float(np.var(elec_trace.samples))
    v_total = float(np.var(schedule.samples_of(gated_trace.samples, SlotKind.CALIBRATION)))
    if v_total <= v_elec:
        raise CalibrationFailure(
            f"No shot-noise clearance: calibration variance {v_total:.6g} <= electronic {v_elec:.6g}")

    clearance = 10.0 * math.log10(v_total / v_elec) if v_elec > 0 else math.inf
    logger.info("SNU calibration: total %.6g, electronic %.6g, clearance %.2f dB over %d slots",
                v_total, v_elec, clearance, len(cal_slots))
    return CalibrationRecord(v_elec, v_total, [f"{slot_prefix}{s.index}" for s in cal_slots])


def merge_records(records: List[CalibrationRecord]) -> CalibrationRecord:
    """Average several records; slot ids are concatenated in order"""
    if not records:
        raise ValidationError("No calibration records to merge")
    v_elec = float(np.mean([r.v_elec_raw for r in records]))
    v_total = float(np.mean([r.v_total_raw for r in records]))
    ids = [sid for r in records for sid in r.slot_ids]
    return CalibrationRecord(v_elec, v_total, ids, nominal=all(r.nominal for r in records))


def dsp_noise_gain(trace_rate: float, mf_rate: float, mf_tap_energy: float,
                   cascade_gain: float = 1.0, analytic: bool = True) -> float:
    """
    Per-quadrature symbol variance produced by unit-variance white trace noise.

    The factor 2 accounts for one-sided downconversion of a real trace.
    """
    if not trace_rate > 0 or not mf_rate > 0 or not mf_tap_energy > 0 or not cascade_gain > 0:
        raise ValidationError("Rates, tap energy and gain must be positive")
    factor = 2.0 if analytic else 1.0
    return factor * (mf_rate / trace_rate) * mf_tap_energy / cascade_gain ** 2


def normalize_symbols(frame: SymbolFrame, record: CalibrationRecord, sps_gain: float) -> SymbolFrame:
    """Divide by sqrt(snu_scale * sps_gain) so one shot-noise unit has variance 1"""
    if not sps_gain > 0:
        raise ValidationError(f"DSP gain must be positive, got {sps_gain}")
    scale = math.sqrt(record.snu_scale * sps_gain)
    diagnostics = dict(frame.diagnostics)
    diagnostics['snu_scale'] = record.snu_scale
    return SymbolFrame(frame.symbols / scale, frame.roles.copy(), frame.symbol_rate,
                       pattern=frame.pattern, diagnostics=diagnostics)


def measure_clearance(elec_trace: Waveform, total_trace: Waveform) -> float:
    """Shot-noise clearance in dB, total over electronic"""
    v_elec = float(np.var(elec_trace.samples))
    v_total = float(np.var(total_trace.samples))
    if v_elec <= 0.0:
        raise CalibrationFailure("Electronic trace has zero variance")
    if v_total <= v_elec:
        raise CalibrationFailure("Total noise does not exceed electronic noise")
    return 10.0 * math.log10(v_total / v_elec)


def psd_flatness_db(trace: Waveform, band: Optional[Tuple[float, float]] = None,
                    nperseg: int = 256) -> float:
    """Largest deviation in dB of the Welch PSD from its in-band mean"""
    freqs, psd = signal.welch(trace.samples, fs=trace.sample_rate, nperseg=nperseg, detrend=False)
    if band is not None:
        keep = (freqs >= band[0]) & (freqs <= band[1])
        psd = psd[keep]
    if psd.size == 0 or np.any(psd <= 0):
        raise ValidationError("PSD band is empty or contains zero power")
    return float(np.max(np.abs(10.0 * np.log10(psd / np.mean(psd)))))
