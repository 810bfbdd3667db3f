#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Experiment Runner - end-to-end simulation, key-rate evaluation and sweeps

A frame runs tx -> channel -> detector -> calibration -> rx DSP and yields
sufficient statistics. Frames run on a thread pool and are reduced in frame
order, so a fixed seed always gives the same report.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from channel_estimator import (
    ChannelEstimate, Referral, SufficientStats, estimate_from_stats, worst_case_bounds
)
from channel_model import ChannelParams, ReceiverParams, aom_gate, apply_channel, heterodyne_detect
from config_manager import (
    channel_params, export_config, link_transmittance, receiver_params, resolve_eta,
    security_params, worker_threads
)
from key_rate_engine import KeyRateReport, key_rate_pipeline, plob_bound
from qkd_errors import CvqkdError, StageFailure, ValidationError
from run_logger import RunLogger
from rx_dsp import (
    compensate_phase, data_mask_with_guard, downconvert_branch, equalize, estimate_frequency_offset,
    estimate_phase, evm, matched_filter_and_sync, training_phase_variance
)
from signal_core import RngStream, Waveform
from snu_calibration import (
    CalibrationRecord, calibrate_snu, dsp_noise_gain, merge_records, normalize_symbols
)
from tx_dsp import (
    FrameSchedule, SlotKind, SymbolFrame, TrainingPattern, build_frame_schedule,
    build_training_pattern, generate_gaussian_symbols, interleave_training,
    shape_and_upconvert, synthesize_pilot
)
from waveform_io import write_waveform

logger = logging.getLogger(__name__)

SWEEP_FORMAT = '{:.9g}'
ELECTRONIC_TRACE_FILE = 'electronic.cvwf'
GATED_TRACE_FILE = 'gated_frame0.cvwf'


# ============================================================================
# Link plan
# ============================================================================

@dataclass
class LinkPlan:
    """Everything a frame needs that does not depend on the frame's randomness"""
    config: Dict[str, Any]
    channel: ChannelParams
    receiver: ReceiverParams
    eta: float
    v_el: float
    pattern: TrainingPattern
    schedule: FrameSchedule
    signal_samples: int
    quantum_band: Tuple[float, float]
    pilot_if: float

    @property
    def seed(self) -> int:
        return int(self.config['run']['seed'])

    @property
    def guard_symbols(self) -> int:
        return self.config['core']['rrc_span_symbols'] // 2

    @property
    def shot_raw(self) -> float:
        return float(self.config['receiver']['shot_noise_raw'])


def build_link_plan(cfg: Dict[str, Any], length_km: Optional[float] = None) -> LinkPlan:
    """Resolve the frame layout, slot schedule and receiver IFs from the config"""
    tx = cfg['tx']
    rx = cfg['rx']
    sps = tx['samples_per_symbol']
    rs = tx['symbol_rate_hz']

    n_symbols = cfg['run']['symbols_per_frame']
    ratio = tx['training_ratio']
    n_data = int(round(n_symbols * (1.0 - ratio)))
    pattern = build_training_pattern(n_data, ratio, tx['training_seed'], math.sqrt(tx['v_mod']))
    if pattern.n_total != n_symbols:
        logger.debug("Frame holds %d symbols (%d requested) after training layout", pattern.n_total, n_symbols)

    signal_samples = pattern.n_total * sps
    overhead = cfg['calibration']['gating_overhead']
    if overhead > 0.0:
        cal_samples = int(round(signal_samples * overhead / (1.0 - overhead)))
        schedule = build_frame_schedule(signal_samples + cal_samples, overhead, cal_samples)
    else:
        schedule = build_frame_schedule(signal_samples, 0.0, 0)

    half_band = 0.5 * (1.0 + tx['rolloff']) * rs
    f_shift = tx['frequency_shift_hz']
    quantum_band = (f_shift - half_band, f_shift + half_band)

    receiver = receiver_params(cfg)
    channel = channel_params(cfg, length_km)
    pilot_if = tx['pilot_frequency_hz'] + channel.cfo_hz
    search = (abs(pilot_if) - rx['foe_search_halfwidth_hz'], abs(pilot_if) + rx['foe_search_halfwidth_hz'])
    if search[0] <= 0.0 or search[1] >= 0.5 * tx['sample_rate_hz']:
        raise ValidationError(
            f"Pilot IF {pilot_if / 1e6:.0f} MHz leaves no FOE search band inside (0, fs/2)")

    return LinkPlan(
        config=cfg, channel=channel, receiver=receiver, eta=resolve_eta(cfg),
        v_el=receiver.electronic_noise, pattern=pattern, schedule=schedule,
        signal_samples=signal_samples, quantum_band=quantum_band,
        pilot_if=pilot_if
    )


# ============================================================================
# Frame stages
# ============================================================================

@dataclass
class TxFrame:
    symbols: SymbolFrame
    quantum: Waveform
    pilot: Waveform


@dataclass
class RxFrame:
    symbols: SymbolFrame
    cfo_hat_hz: float
    pilot_snr_db: float
    pilot_low_confidence: bool
    residual_phase_variance: float


def transmit_frame(plan: LinkPlan, rng: RngStream) -> TxFrame:
    """Alice: Gaussian data, training, shaping and pilot, padded to the slot schedule"""
    cfg = plan.config
    tx = cfg['tx']
    sps = tx['samples_per_symbol']
    data = generate_gaussian_symbols(plan.pattern.n_data, tx['v_mod'], rng.child('symbols'),
                                     tx['symbol_rate_hz'], cfg['core']['word_bits'])
    frame = interleave_training(data, tx['training_ratio'], tx['training_seed'], tx['v_mod'])

    reference_power = 2.0 * tx['v_mod'] / sps
    dbc = tx['residual_carrier_dbc']
    carrier = 0.0 if dbc is None else 10.0 ** (dbc / 20.0) * math.sqrt(reference_power)

    quantum = shape_and_upconvert(frame, sps, tx['rolloff'], tx['frequency_shift_hz'],
                                  tx['sample_rate_hz'], cfg['core']['rrc_span_symbols'], carrier)
    total = plan.schedule.total_samples
    if total > len(quantum):
        quantum = quantum.padded(total)
    pilot = synthesize_pilot(tx['sample_rate_hz'], tx['pilot_frequency_hz'], tx['pilot_power_ratio_db'],
                             total, reference_power, plan.quantum_band)
    return TxFrame(frame, quantum, pilot)


def frame_shot_raw(plan: LinkPlan, frame_id: int) -> float:
    """LO shot-noise variance seen by a frame, including configured drift"""
    drift = plan.config['calibration']['snu_drift_per_frame']
    return plan.shot_raw * (1.0 + drift * frame_id)


def propagate_frame(plan: LinkPlan, tx: TxFrame, rng: RngStream,
                    frame_id: int = 0) -> Tuple[Waveform, Waveform]:
    """
    Channel, AOM gate and both balanced detectors; returns the raw
    (quantum, pilot) traces. The gate sits after the channel so calibration
    slots carry neither signal nor excess noise.
    """
    q_field, p_field = apply_channel(tx.quantum, tx.pilot, plan.channel, rng.child('channel'))
    if plan.schedule.slots_of(SlotKind.CALIBRATION):
        q_field = aom_gate(q_field, plan.schedule, plan.config['channel']['aom_extinction_db'])
    return heterodyne_detect(
        q_field, p_field, plan.receiver, rng.child('detector'), eta=plan.eta,
        shot_raw=frame_shot_raw(plan, frame_id),
        noise_enabled=plan.config['receiver']['noise_enabled'],
        electronic_raw=plan.v_el * plan.shot_raw
    )


def capture_electronic_trace(plan: LinkPlan) -> Optional[Waveform]:
    """One-time LO-off capture; None when detector noise is disabled"""
    cfg = plan.config
    if not cfg['receiver']['noise_enabled']:
        return None
    n = cfg['calibration']['electronic_trace_samples']
    silent = Waveform(np.zeros(n), cfg['tx']['sample_rate_hz'])
    trace, _ = heterodyne_detect(silent, silent, plan.receiver, RngStream(plan.seed, 'electronic'),
                                 eta=plan.eta, shot_raw=plan.shot_raw, lo_on=False)
    return trace


def calibrate_frame(plan: LinkPlan, elec: Optional[Waveform], gated: Waveform,
                    frame_id: int) -> CalibrationRecord:
    """Per-frame SNU record from the frame's calibration slots"""
    if elec is None or not plan.schedule.slots_of(SlotKind.CALIBRATION):
        if plan.config['receiver']['noise_enabled']:
            logger.warning("No calibration slots; using the detector model's noise scale")
        return CalibrationRecord.from_model(frame_shot_raw(plan, frame_id), plan.v_el)
    return calibrate_snu(elec, gated, plan.schedule, slot_prefix=f"f{frame_id}:")


def receive_frame(plan: LinkPlan, quantum: Waveform, pilot: Waveform, record: CalibrationRecord,
                  compensate: bool = True, pilot_bandwidth: Optional[float] = None) -> RxFrame:
    """
    Bob's DSP on the first signal slot: FOE, downconversion, phase recovery,
    matched filter and sync, SNU normalization and equalization.
    """
    cfg = plan.config
    rx = cfg['rx']
    f_pilot = cfg['tx']['pilot_frequency_hz']
    slot = plan.schedule.slots_of(SlotKind.SIGNAL)[0]
    q_sig = quantum.slice(slot.start, slot.stop)
    p_sig = pilot.slice(slot.start, slot.stop)

    halfwidth = rx['foe_search_halfwidth_hz']
    centre = abs(plan.pilot_if)
    f_hat = estimate_frequency_offset(p_sig, (centre - halfwidth, centre + halfwidth), rx['foe_min_peak_db'])
    cfo_hat = math.copysign(f_hat, plan.pilot_if) - f_pilot

    pilot_bb = downconvert_branch(p_sig, f_pilot + cfo_hat, pilot_bandwidth or rx['pilot_bandwidth_hz'])
    quantum_bb = downconvert_branch(q_sig, cfg['tx']['frequency_shift_hz'] + cfo_hat,
                                    rx['quantum_bandwidth_hz'])
    trajectory = estimate_phase(pilot_bb, rx['phase_smoothing_window'], rx['min_pilot_snr_db'])
    if compensate:
        quantum_bb = compensate_phase(quantum_bb, trajectory)

    synced = matched_filter_and_sync(
        quantum_bb, cfg['tx']['rolloff'], rx['target_sps'], plan.pattern,
        cfg['core']['rrc_span_symbols'], rx['max_delay_symbols'], rx['sync_threshold'])
    d = synced.diagnostics
    sps_gain = dsp_noise_gain(d['input_sample_rate'], d['mf_sample_rate'], d['mf_tap_energy'],
                              d['cascade_gain'], analytic=True)
    normalized = normalize_symbols(synced, record, sps_gain)
    phase_var = training_phase_variance(normalized, plan.pattern, rx['phase_block_symbols'])
    equalized = equalize(normalized, plan.pattern, rx['equalizer_taps'], rx['equalizer_mode'],
                         rx['equalizer_prune_z'], preserve_noise_scale=True,
                         lms_step=rx['lms_step'], lms_passes=rx['lms_passes'])
    return RxFrame(equalized, cfo_hat, trajectory.snr_db, trajectory.low_confidence, phase_var)


# ============================================================================
# Report types
# ============================================================================

@dataclass
class FrameMetrics:
    frame_id: int
    evm: float
    residual_phase_variance: float
    sync_confidence: float
    cfo_hat_hz: float
    pilot_snr_db: float
    pilot_low_confidence: bool
    snu_scale: float
    equalizer: Dict[str, Any]
    data_symbols: int

    def to_dict(self) -> dict:
        return {
            'frame_id': self.frame_id,
            'evm': self.evm,
            'residual_phase_variance': self.residual_phase_variance,
            'sync_confidence': self.sync_confidence,
            'cfo_hat_hz': self.cfo_hat_hz,
            'pilot_snr_db': self.pilot_snr_db,
            'pilot_low_confidence': self.pilot_low_confidence,
            'snu_scale': self.snu_scale,
            'equalizer': dict(self.equalizer),
            'data_symbols': self.data_symbols
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'FrameMetrics':
        return cls(**data)


@dataclass
class ExperimentReport:
    config: Dict[str, Any]
    frames: List[FrameMetrics] = field(default_factory=list)
    calibration: Optional[CalibrationRecord] = None
    estimate: Optional[ChannelEstimate] = None
    key_rate: Optional[KeyRateReport] = None
    failures: List[Dict[str, Any]] = field(default_factory=list)
    samples: Dict[str, int] = field(default_factory=dict)
    injected: Dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures and self.key_rate is not None

    def to_dict(self) -> dict:
        return {
            'config': self.config,
            'frames': [f.to_dict() for f in self.frames],
            'calibration': None if self.calibration is None else self.calibration.to_dict(),
            'estimate': None if self.estimate is None else self.estimate.to_dict(),
            'key_rate': None if self.key_rate is None else self.key_rate.to_dict(),
            'failures': list(self.failures),
            'samples': dict(self.samples),
            'injected': dict(self.injected)
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentReport':
        return cls(
            config=data['config'],
            frames=[FrameMetrics.from_dict(f) for f in data.get('frames', [])],
            calibration=None if data.get('calibration') is None else CalibrationRecord.from_dict(data['calibration']),
            estimate=None if data.get('estimate') is None else ChannelEstimate.from_dict(data['estimate']),
            key_rate=None if data.get('key_rate') is None else KeyRateReport.from_dict(data['key_rate']),
            failures=list(data.get('failures', [])),
            samples=dict(data.get('samples', {})),
            injected=dict(data.get('injected', {}))
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ============================================================================
# End-to-end run
# ============================================================================

@dataclass
class _FrameOutcome:
    frame_id: int
    metrics: Optional[FrameMetrics] = None
    stats: Optional[SufficientStats] = None
    record: Optional[CalibrationRecord] = None
    failure: Optional[StageFailure] = None
    timings: List[Tuple[str, float]] = field(default_factory=list)


def _timed(outcome: _FrameOutcome, stage: str, fn: Callable, *args, **kwargs):
    start = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    except CvqkdError as e:
        raise StageFailure(stage, outcome.frame_id, str(e)) from e
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as e:
        raise StageFailure(stage, outcome.frame_id, f"{type(e).__name__}: {e}") from e
    outcome.timings.append((stage, time.perf_counter() - start))
    return result


def run_frame(plan: LinkPlan, frame_id: int, elec: Optional[Waveform],
              waveform_dir: Optional[Path] = None) -> _FrameOutcome:
    outcome = _FrameOutcome(frame_id)
    rng = RngStream(plan.seed, 'frame').child(frame_id)
    try:
        tx = _timed(outcome, 'tx', transmit_frame, plan, rng.child('tx'))
        quantum, pilot = _timed(outcome, 'channel', propagate_frame, plan, tx, rng, frame_id)
        if waveform_dir is not None and frame_id == 0:
            write_waveform(waveform_dir / GATED_TRACE_FILE, quantum)
        record = _timed(outcome, 'calibration', calibrate_frame, plan, elec, quantum, frame_id)
        rx = _timed(outcome, 'rx', receive_frame, plan, quantum, pilot, record)
    except StageFailure as failure:
        logger.error("%s", failure)
        outcome.failure = failure
        return outcome

    eq = rx.symbols
    mask = data_mask_with_guard(eq, plan.guard_symbols)
    alice = tx.symbols.symbols[mask]
    bob = eq.symbols[mask]
    outcome.stats = SufficientStats.from_symbols(alice, bob)
    outcome.record = record
    outcome.metrics = FrameMetrics(
        frame_id=frame_id,
        evm=evm(bob, alice, fit_gain=True),
        residual_phase_variance=rx.residual_phase_variance,
        sync_confidence=float(eq.diagnostics['sync_confidence']),
        cfo_hat_hz=rx.cfo_hat_hz,
        pilot_snr_db=rx.pilot_snr_db,
        pilot_low_confidence=rx.pilot_low_confidence,
        snu_scale=record.snu_scale,
        equalizer=eq.diagnostics['equalizer'].to_dict(),
        data_symbols=int(mask.sum())
    )
    return outcome


def injected_parameters(plan: LinkPlan) -> Dict[str, float]:
    """Channel values the estimator should recover under the key-rate accounting"""
    cfg = plan.config
    if cfg['channel']['untrusted_includes_electronic']:
        expected_t = link_transmittance(cfg, plan.channel.length_km)
    else:
        expected_t = plan.channel.transmittance / (1.0 + plan.v_el)
    return {
        'T_expected': expected_t,
        'T_simulated': plan.channel.transmittance,
        'excess_noise': plan.channel.excess_noise,
        'eta': plan.eta,
        'v_el': plan.v_el
    }


def run_endtoend(cfg: Dict[str, Any], run_logger: Optional[RunLogger] = None,
                 waveform_dir: Optional[Path] = None) -> ExperimentReport:
    """
    Simulate cfg.run.frames frames and estimate the channel from all of them.

    Stage failures are recorded per frame; the remaining frames still run.
    """
    frames = cfg['run']['frames']
    started = time.perf_counter()
    if run_logger:
        run_logger.log_run_started('simulate', cfg['run']['seed'], frames)

    plan = build_link_plan(cfg)
    report = ExperimentReport(config=json.loads(export_config(cfg)), injected=injected_parameters(plan))
    elec = capture_electronic_trace(plan)
    if waveform_dir is not None:
        waveform_dir = Path(waveform_dir)
        if elec is not None:
            write_waveform(waveform_dir / ELECTRONIC_TRACE_FILE, elec)

    threads = min(worker_threads(cfg), frames)
    logger.info("Running %d frame(s) of %d symbols on %d thread(s)", frames, plan.pattern.n_total, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(lambda f: run_frame(plan, f, elec, waveform_dir), range(frames)))

    total = SufficientStats()
    records = []
    for outcome in outcomes:
        if run_logger:
            for stage, elapsed in outcome.timings:
                run_logger.log_stage_completed(outcome.frame_id, stage, elapsed)
        if outcome.failure is not None:
            report.failures.append(outcome.failure.to_dict())
            if run_logger:
                run_logger.log_stage_failed(outcome.frame_id, outcome.failure.stage, outcome.failure.message)
            continue
        total = total + outcome.stats
        records.append(outcome.record)
        report.frames.append(outcome.metrics)
        if run_logger:
            run_logger.log_calibration(outcome.frame_id, outcome.record.snu_scale,
                                       outcome.record.electronic_share)

    report.samples = {
        'frames_requested': frames,
        'frames_ok': len(report.frames),
        'symbols_per_frame': plan.pattern.n_total,
        'samples_per_frame': plan.schedule.total_samples,
        'data_symbols_used': total.n // 2
    }

    if records:
        report.calibration = merge_records(records)
        _estimate_and_rate(cfg, plan, total, report)
    else:
        logger.error("No frame completed; nothing to estimate")

    if run_logger:
        run_logger.log_run_finished('simulate', time.perf_counter() - started,
                                    len(report.frames), frames - len(report.frames))
    return report


def _estimate_and_rate(cfg: Dict[str, Any], plan: LinkPlan, stats: SufficientStats,
                       report: ExperimentReport):
    est_cfg = cfg['estimation']
    try:
        point = estimate_from_stats(stats, plan.eta, cfg['tx']['v_mod'],
                                    Referral.parse(est_cfg['referral']), est_cfg['min_symbols'])
        report.estimate = worst_case_bounds(point, est_cfg['z_sigma'])
        report.key_rate = key_rate_pipeline(security_params(cfg, n_finite=stats.n // 2), point)
    except (CvqkdError, ValueError) as e:
        failure = StageFailure('estimation', None, str(e))
        logger.error("%s", failure)
        report.failures.append(failure.to_dict())


# ============================================================================
# Parameter-only evaluation and sweeps
# ============================================================================

def run_keyrate(cfg: Dict[str, Any]) -> KeyRateReport:
    """Key rates from configured parameters alone"""
    return key_rate_pipeline(security_params(cfg))


def n_label(n: float) -> str:
    exponent = math.log10(n)
    if math.isclose(exponent, round(exponent), abs_tol=1e-12):
        return f"1e{int(round(exponent))}"
    return f"{n:g}"


@dataclass
class SweepRow:
    distance_km: float
    transmittance: float
    k_asym: float
    k_finite: Dict[str, float]
    k_plob: float

    def as_list(self) -> List[float]:
        return [self.distance_km, self.transmittance, self.k_asym, *self.k_finite.values(), self.k_plob]


def sweep_distance(cfg: Dict[str, Any], distances: Sequence[float]) -> List[SweepRow]:
    """
    Analytic key rates over distance: asymptotic, finite-size at each
    configured block length and the PLOB bound, all under the same loss.
    """
    distances = [float(d) for d in distances]
    if not distances:
        raise ValidationError("Distance list is empty")
    if any(d < 0 for d in distances):
        raise ValidationError("Distances must be >= 0 km")
    if any(b < a for a, b in zip(distances, distances[1:])):
        raise ValidationError("Distances must be in ascending order")

    n_values = cfg['security']['n_values']
    f_eff = cfg['security']['plob_effective_rate_hz']
    rows = []
    for d in distances:
        t = link_transmittance(cfg, d)
        k_asym = key_rate_pipeline(security_params(cfg, t_channel=t, n_finite=math.inf)).k_asym
        finite = {}
        for n in n_values:
            finite[f"K_{n_label(n)}"] = key_rate_pipeline(security_params(cfg, t_channel=t, n_finite=n)).k_finite
        rows.append(SweepRow(d, t, k_asym, finite, plob_bound(t, f_eff)))
    return rows


def sweep_header(cfg: Dict[str, Any]) -> List[str]:
    return (['distance_km', 'T', 'K_asym']
            + [f"K_{n_label(n)}" for n in cfg['security']['n_values']] + ['K_plob'])


def write_sweep_csv(rows: List[SweepRow], header: List[str], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([SWEEP_FORMAT.format(v) for v in row.as_list()])
    return path


def calibrate_from_files(cfg: Dict[str, Any], elec: Waveform, gated: Waveform,
                         overhead: Optional[float] = None,
                         calib_slot_samples: Optional[int] = None) -> CalibrationRecord:
    """
    SNU record from recorded traces.

    Without an explicit slot length the run's frame layout is assumed.
    """
    overhead = cfg['calibration']['gating_overhead'] if overhead is None else overhead
    if overhead <= 0.0:
        raise ValidationError("Calibration from files needs a gating overhead above 0")
    if calib_slot_samples is None:
        plan = build_link_plan(cfg)
        cal = plan.schedule.slots_of(SlotKind.CALIBRATION)
        if not cal:
            raise ValidationError("Configured frame layout has no calibration slots")
        calib_slot_samples = cal[0].length
    schedule = build_frame_schedule(len(gated), overhead, calib_slot_samples)
    return calibrate_snu(elec, gated, schedule)
