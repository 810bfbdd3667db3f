#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Channel Model - fiber, phase noise, excess noise, AOM gating and detection

Fields arriving here are expressed in the frame of Bob's free-running laser,
so the carrier frequency offset and the combined laser phase noise are one
rotation applied identically to the quantum and pilot branches.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.constants as const

from qkd_errors import ValidationError
from signal_core import RngStream, Waveform, ideal_bandpass
from tx_dsp import FrameSchedule, SlotKind

logger = logging.getLogger(__name__)

# h*c/e in eV*nm
PHOTON_ENERGY_EV_NM = const.h * const.c / const.e * 1e9

CLEARANCE_DEFINITIONS = ('total', 'shot')


@dataclass
class ChannelParams:
    length_km: float = 28.6
    alpha_db_per_km: float = 0.2
    untrusted_loss_db: float = 5.0
    excess_noise: float = 0.055
    cfo_hz: float = -1.55e9
    combined_linewidth_hz: float = 200.0
    crosstalk_db: Optional[float] = None

    def __post_init__(self):
        if self.length_km < 0:
            raise ValidationError(f"Fiber length must be >= 0, got {self.length_km}")
        if self.alpha_db_per_km < 0:
            raise ValidationError(f"Attenuation must be >= 0, got {self.alpha_db_per_km}")
        if self.untrusted_loss_db < 0:
            raise ValidationError(f"Untrusted loss must be >= 0 dB, got {self.untrusted_loss_db}")
        if self.excess_noise < 0:
            raise ValidationError(f"Excess noise must be >= 0, got {self.excess_noise}")
        if self.combined_linewidth_hz < 0:
            raise ValidationError(f"Linewidth must be >= 0, got {self.combined_linewidth_hz}")
        if self.crosstalk_db is not None and self.crosstalk_db > 0:
            raise ValidationError(f"Crosstalk must be <= 0 dB, got {self.crosstalk_db}")

    @property
    def transmittance(self) -> float:
        return fiber_transmittance(self.length_km, self.alpha_db_per_km, self.untrusted_loss_db)


@dataclass
class ReceiverParams:
    responsivity_a_per_w: float = 0.8
    wavelength_nm: float = 1550.12
    coupling_loss_db: float = 4.0
    extra_loss_db: float = 0.5
    clearance_db: float = 7.42
    clearance_definition: str = 'total'
    bandwidth_hz: float = 1.5e9

    def __post_init__(self):
        if not 1000.0 < self.wavelength_nm < 2000.0:
            raise ValidationError(f"Wavelength must lie in (1000, 2000) nm, got {self.wavelength_nm}")
        if not self.responsivity_a_per_w > 0:
            raise ValidationError(f"Responsivity must be positive, got {self.responsivity_a_per_w}")
        if self.coupling_loss_db < 0 or self.extra_loss_db < 0:
            raise ValidationError("Receiver losses must be >= 0 dB")
        if self.clearance_definition not in CLEARANCE_DEFINITIONS:
            raise ValidationError(
                f"Clearance definition must be one of {CLEARANCE_DEFINITIONS}, got '{self.clearance_definition}'")
        if not self.bandwidth_hz > 0:
            raise ValidationError(f"Detector bandwidth must be positive, got {self.bandwidth_hz}")

    @classmethod
    def improved(cls) -> 'ReceiverParams':
        """Higher-responsivity photodiode with an edge coupler"""
        return cls(responsivity_a_per_w=1.1, coupling_loss_db=1.0)

    @property
    def electronic_noise(self) -> float:
        return electronic_noise_from_clearance(self.clearance_db, self.clearance_definition)


def fiber_transmittance(length_km: float, alpha_db_per_km: float = 0.2,
                        untrusted_loss_db: float = 0.0) -> float:
    """T = 10^(-(alpha*L + untrusted)/10)"""
    if length_km < 0 or alpha_db_per_km < 0 or untrusted_loss_db < 0:
        raise ValidationError("Length, attenuation and untrusted loss must be >= 0")
    return 10.0 ** (-(alpha_db_per_km * length_km + untrusted_loss_db) / 10.0)


def detection_efficiency(rx: ReceiverParams) -> float:
    """Quantum efficiency times coupling and extra losses"""
    quantum_eff = rx.responsivity_a_per_w * PHOTON_ENERGY_EV_NM / rx.wavelength_nm
    eta = quantum_eff * 10.0 ** (-(rx.coupling_loss_db + rx.extra_loss_db) / 10.0)
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"Detection efficiency {eta:.4f} is outside (0, 1]")
    return eta


def electronic_noise_from_clearance(clearance_db: float, definition: str = 'total') -> float:
    """
    Electronic noise in SNU from the shot-noise clearance.

    'total': clearance = (shot + elec) / elec, so v_el = 1 / (10^(C/10) - 1)
    'shot':  clearance = shot / elec,          so v_el = 10^(-C/10)
    """
    if not clearance_db > 0:
        raise ValidationError(f"Clearance must be positive, got {clearance_db} dB")
    if definition not in CLEARANCE_DEFINITIONS:
        raise ValidationError(f"Unknown clearance definition '{definition}'")
    if math.isinf(clearance_db):
        return 0.0
    ratio = 10.0 ** (clearance_db / 10.0)
    if definition == 'total':
        return 1.0 / (ratio - 1.0)
    return 1.0 / ratio


def wiener_phase(n: int, sample_rate: float, linewidth_hz: float, rng: RngStream) -> np.ndarray:
    """Phase random walk with increment variance 2*pi*linewidth/fs, starting at 0"""
    if linewidth_hz == 0.0:
        return np.zeros(n)
    step = math.sqrt(2.0 * math.pi * linewidth_hz / sample_rate)
    increments = rng.generator().normal(0.0, step, size=n)
    increments[0] = 0.0
    return np.cumsum(increments)


def excess_noise_bandwidth(w: Waveform) -> float:
    """Bandwidth the excess noise occupies: the shaped band if known, else full"""
    band = w.occupied_band()
    if band is None:
        return w.sample_rate
    return band[1] - band[0]


def apply_channel(quantum: Waveform, pilot: Waveform, params: ChannelParams,
                  rng: RngStream) -> Tuple[Waveform, Waveform]:
    """
    Propagate both branches through the channel.

    Both get sqrt(T) attenuation and the same rotation exp(j(2*pi*cfo*t + phi(t))).
    The quantum branch gets complex Gaussian excess noise with per-quadrature
    variance T*eps per sample, restricted to its shaped band when the band is
    known. Outputs are complex fields.
    """
    if quantum.sample_rate != pilot.sample_rate:
        raise ValidationError("Quantum and pilot branches must share a sample rate")
    if len(quantum) != len(pilot):
        raise ValidationError(f"Branch lengths differ: {len(quantum)} vs {len(pilot)}")

    n = len(quantum)
    fs = quantum.sample_rate
    transmittance = params.transmittance
    gain = math.sqrt(transmittance)

    phi = wiener_phase(n, fs, params.combined_linewidth_hz, rng.child('phase'))
    phi = phi + 2.0 * np.pi * params.cfo_hz * np.arange(n) / fs
    rotation = np.exp(1j * phi)

    q_field = gain * quantum.field()
    if params.excess_noise > 0.0:
        sigma = math.sqrt(transmittance * params.excess_noise)
        gen = rng.child('excess').generator()
        noise = sigma * (gen.standard_normal(n) + 1j * gen.standard_normal(n))
        band = quantum.occupied_band()
        if band is not None:
            noise = ideal_bandpass(Waveform(noise, fs), quantum.center_frequency_hint,
                                   band[1] - band[0]).samples
        q_field = q_field + noise
    q_field = q_field * rotation
    p_field = gain * pilot.field() * rotation

    if params.crosstalk_db is not None:
        q_field = q_field + math.sqrt(10.0 ** (params.crosstalk_db / 10.0)) * p_field

    q_out = quantum.with_samples(q_field, center_frequency_hint=quantum.center_frequency_hint + params.cfo_hz)
    p_out = pilot.with_samples(p_field, center_frequency_hint=pilot.center_frequency_hint + params.cfo_hz)
    return q_out, p_out


def aom_gate(w: Waveform, schedule: FrameSchedule, extinction_db: float = 50.0) -> Waveform:
    """Attenuate calibration slots by the AOM extinction; signal slots pass untouched"""
    if len(w) != schedule.total_samples:
        raise ValidationError(
            f"Waveform length {len(w)} does not match schedule length {schedule.total_samples}")
    if extinction_db < 0:
        raise ValidationError(f"Extinction must be >= 0 dB, got {extinction_db}")
    leak = 0.0 if math.isinf(extinction_db) else 10.0 ** (-extinction_db / 20.0)

    samples = w.samples.copy()
    analytic = None if w.analytic is None else w.analytic.copy()
    for slot in schedule.slots_of(SlotKind.CALIBRATION):
        samples[slot.start:slot.stop] *= leak
        if analytic is not None:
            analytic[slot.start:slot.stop] *= leak
    return w.with_samples(samples, analytic=analytic)


def heterodyne_detect(quantum: Waveform, pilot: Waveform, rx: ReceiverParams, rng: RngStream,
                      eta: Optional[float] = None, shot_raw: float = 1.0,
                      lo_on: bool = True, noise_enabled: bool = True,
                      electronic_raw: Optional[float] = None) -> Tuple[Waveform, Waveform]:
    """
    Beat each branch against the LO on its own balanced detector.

    trace = sqrt(eta * shot_raw) * Re{field} + shot + electronic noise, where
    shot noise has variance shot_raw and electronic noise electronic_raw
    (v_el * shot_raw unless given, so LO drift can leave it fixed).
    With the LO off only electronic noise remains.
    """
    if quantum.sample_rate != pilot.sample_rate or len(quantum) != len(pilot):
        raise ValidationError("Quantum and pilot fields must share sample rate and length")
    if not shot_raw > 0:
        raise ValidationError(f"Shot-noise variance must be positive, got {shot_raw}")
    if eta is None:
        eta = detection_efficiency(rx)
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"Detection efficiency must lie in (0, 1], got {eta}")

    fs = quantum.sample_rate
    band = quantum.occupied_band()
    if band is not None:
        edge = max(abs(band[0]), abs(band[1]))
        if edge > 0.5 * fs:
            raise ValidationError(f"Signal edge {edge / 1e6:.0f} MHz exceeds Nyquist {fs / 2e6:.0f} MHz")
        if edge > rx.bandwidth_hz:
            logger.warning("Signal edge %.0f MHz exceeds detector bandwidth %.0f MHz",
                           edge / 1e6, rx.bandwidth_hz / 1e6)

    if electronic_raw is None:
        electronic_raw = rx.electronic_noise * shot_raw
    kappa = math.sqrt(shot_raw)
    noise_var = (shot_raw if lo_on else 0.0) + electronic_raw

    traces = []
    for name, branch in (('quantum', quantum), ('pilot', pilot)):
        if lo_on:
            trace = math.sqrt(eta) * kappa * branch.field().real
        else:
            trace = np.zeros(len(branch))
        if noise_enabled and noise_var > 0.0:
            trace = trace + rng.child(name).generator().normal(0.0, math.sqrt(noise_var), size=trace.size)
        traces.append(branch.with_samples(trace))
    return traces[0], traces[1]
