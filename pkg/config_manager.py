#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

import copy
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from channel_model import ChannelParams, ReceiverParams, detection_efficiency, fiber_transmittance
from channel_estimator import Referral
from key_rate_engine import SecurityParams
from qkd_errors import ConfigError, ValidationError
from rx_dsp import EQUALIZER_MODES

logger = logging.getLogger(__name__)

THREADS_ENV = 'CVQKD_THREADS'

# Default configuration: the 28.6 km operating point at desk scale
DEFAULT_CONFIG = {
    # Shared DSP primitives
    'core': {
        'rrc_span_symbols': 32,
        'word_bits': 16
    },

    # Alice
    'tx': {
        'symbol_rate_hz': 1e9,
        'sample_rate_hz': 5e9,
        'samples_per_symbol': 5,
        'rolloff': 0.3,
        'frequency_shift_hz': 750e6,
        'v_mod': 8.0,
        'training_ratio': 0.0625,
        'training_seed': 20240601,
        'pilot_frequency_hz': 50e6,  # below the 100 MHz lower edge of the shifted quantum band
        'pilot_power_ratio_db': 20.0,
        'residual_carrier_dbc': -50.0  # null disables
    },

    # Fiber and Eve
    'channel': {
        'length_km': 28.6,
        'alpha_db_per_km': 0.2,
        'untrusted_loss_db': 5.0,
        'untrusted_includes_electronic': True,
        'excess_noise': 0.055,
        'cfo_hz': -1.55e9,  # Alice's carrier relative to Bob's LO
        'combined_linewidth_hz': 200.0,
        'aom_extinction_db': 50.0,
        'crosstalk_db': None,  # PBS leakage of the pilot into the quantum branch
        'impairments_enabled': True  # False: no excess noise, no phase noise
    },

    # Bob's detector
    'receiver': {
        'preset': 'measured',  # 'measured' or 'improved'
        'responsivity_a_per_w': 0.8,
        'wavelength_nm': 1550.12,
        'coupling_loss_db': 4.0,
        'extra_loss_db': 0.5,
        'clearance_db': 7.42,
        'clearance_definition': 'total',  # 'total' or 'shot'
        'bandwidth_hz': 1.5e9,
        'shot_noise_raw': 1.0,
        'noise_enabled': True
    },

    # Bob's DSP
    'rx': {
        'target_sps': 4,
        'quantum_bandwidth_hz': 1.3e9,
        'pilot_bandwidth_hz': 200e3,
        'foe_search_halfwidth_hz': 100e6,
        'foe_min_peak_db': 10.0,
        'phase_smoothing_window': 64,
        'min_pilot_snr_db': 10.0,
        'equalizer_taps': 21,
        'equalizer_mode': 'ls',  # 'ls' or 'lms'
        'equalizer_prune_z': 4.0,
        'lms_step': 0.01,
        'lms_passes': 4,
        'sync_threshold': 0.7,
        'max_delay_symbols': 64,
        'phase_block_symbols': 256
    },

    # Shot-noise calibration
    'calibration': {
        'gating_overhead': 0.5,
        'electronic_trace_samples': 1 << 20,
        'snu_drift_per_frame': 0.0
    },

    # Parameter estimation
    'estimation': {
        'referral': 'input',  # 'input' or 'output'
        'z_sigma': 6.5,
        'min_symbols': 10000
    },

    # Security analysis
    'security': {
        'eta_trusted': 0.2271,  # null: compose from the receiver section
        'beta': 0.956,
        'repetition_rate_hz': 1e9,
        'overhead': 0.5,
        'eps_smooth': 1e-10,
        'n_finite': 1e9,
        'n_values': [1e10, 1e9],
        'plob_effective_rate_hz': 5e8,
        'v_el_trusted': 0.0
    },

    # Run control
    'run': {
        'seed': 7,
        'frames': 8,
        'symbols_per_frame': 131072,
        'out_dir': 'cvqkd_out',
        'threads': None  # null: CVQKD_THREADS or CPU count
    }
}

# Keys whose value may be null
NULLABLE = {
    ('tx', 'residual_carrier_dbc'),
    ('channel', 'crosstalk_db'),
    ('security', 'eta_trusted'),
    ('run', 'threads')
}

RECEIVER_PRESETS = ('measured', 'improved')


def default_config() -> Dict[str, Any]:
    """Fresh copy of the defaults"""
    return copy.deepcopy(DEFAULT_CONFIG)


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Load configuration from file merged over the defaults; defaults if no path"""
    if path is None:
        return default_config()

    path = Path(path)
    try:
        with open(path, 'r') as f:
            overlay = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None

    if not isinstance(overlay, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    _check_keys(DEFAULT_CONFIG, overlay, '')

    config = _deep_merge(default_config(), overlay)
    validate_config(config)
    return config


def save_config(config: Dict[str, Any], path: Union[str, Path]) -> bool:
    """Save configuration to file"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(config, f, indent=2)
        return True
    except OSError as e:
        logger.warning("Error saving config to %s: %s", path, e)
        return False


def export_config(config: Dict[str, Any]) -> str:
    """Export configuration as JSON string"""
    return json.dumps(config, indent=2)


def _deep_merge(base: dict, overlay: dict) -> dict:
    """Deep merge two dictionaries, overlay takes precedence"""
    result = base.copy()

    for key, value in overlay.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value

    return result


def _check_keys(defaults: dict, overlay: dict, prefix: str):
    for key, value in overlay.items():
        where = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"Unknown config key '{where}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config section '{where}' must be an object")
            _check_keys(defaults[key], value, where + '.')


def _check_type(section: str, key: str, value: Any):
    default = DEFAULT_CONFIG[section][key]
    where = f"{section}.{key}"
    if value is None:
        if (section, key) not in NULLABLE:
            raise ConfigError(f"'{where}' may not be null")
        return
    if (section, key) in NULLABLE and default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"'{where}' has the wrong type: {value!r}")


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def validate_config(config: Dict[str, Any]):
    """Raise ConfigError unless every key is known, typed and in range"""
    _check_keys(DEFAULT_CONFIG, config, '')
    for section, values in DEFAULT_CONFIG.items():
        if section not in config:
            raise ConfigError(f"Missing config section '{section}'")
        for key in values:
            if key not in config[section]:
                raise ConfigError(f"Missing config key '{section}.{key}'")
            _check_type(section, key, config[section][key])

    core, tx, rx = config['core'], config['tx'], config['rx']
    _require(core['rrc_span_symbols'] > 0 and core['rrc_span_symbols'] % 2 == 0,
             "core.rrc_span_symbols must be a positive even number")
    _require(1 <= core['word_bits'] <= 32, "core.word_bits must lie in [1, 32]")

    _require(tx['samples_per_symbol'] >= 2, "tx.samples_per_symbol must be >= 2")
    _require(math.isclose(tx['sample_rate_hz'], tx['samples_per_symbol'] * tx['symbol_rate_hz'], rel_tol=1e-9),
             "tx.sample_rate_hz must equal samples_per_symbol x symbol_rate_hz")
    _require(0.0 < tx['rolloff'] <= 1.0, "tx.rolloff must lie in (0, 1]")
    _require(tx['v_mod'] > 0, "tx.v_mod must be positive")
    _require(0.0 < tx['training_ratio'] <= 0.5, "tx.training_ratio must lie in (0, 0.5]")
    half_band = 0.5 * (1 + tx['rolloff']) * tx['symbol_rate_hz']
    lo, hi = tx['frequency_shift_hz'] - half_band, tx['frequency_shift_hz'] + half_band
    _require(lo > 0 and hi < tx['sample_rate_hz'] / 2,
             "tx.frequency_shift_hz must keep the shaped band inside (0, fs/2)")
    _require(0 < tx['pilot_frequency_hz'] < tx['sample_rate_hz'] / 2 and not lo <= tx['pilot_frequency_hz'] <= hi,
             "tx.pilot_frequency_hz must lie in (0, fs/2) outside the quantum band")

    _require(config['receiver']['preset'] in RECEIVER_PRESETS,
             f"receiver.preset must be one of {RECEIVER_PRESETS}")
    _require(config['receiver']['shot_noise_raw'] > 0, "receiver.shot_noise_raw must be positive")

    _require(rx['target_sps'] >= 2, "rx.target_sps must be >= 2")
    _require(rx['equalizer_taps'] >= 1 and rx['equalizer_taps'] % 2 == 1, "rx.equalizer_taps must be odd")
    _require(rx['equalizer_mode'] in EQUALIZER_MODES, f"rx.equalizer_mode must be one of {EQUALIZER_MODES}")
    _require(rx['equalizer_prune_z'] >= 0, "rx.equalizer_prune_z must be >= 0")
    _require(rx['quantum_bandwidth_hz'] > 0 and rx['pilot_bandwidth_hz'] > 0, "rx bandwidths must be positive")
    _require(rx['foe_search_halfwidth_hz'] > 0, "rx.foe_search_halfwidth_hz must be positive")
    _require(rx['phase_smoothing_window'] >= 1, "rx.phase_smoothing_window must be >= 1")
    _require(0.0 < rx['sync_threshold'] <= 1.0, "rx.sync_threshold must lie in (0, 1]")
    _require(rx['max_delay_symbols'] >= 0, "rx.max_delay_symbols must be >= 0")
    _require(rx['phase_block_symbols'] >= 1, "rx.phase_block_symbols must be >= 1")
    _require(rx['lms_step'] > 0 and rx['lms_passes'] >= 1, "rx LMS step and passes must be positive")

    cal = config['calibration']
    _require(0.0 <= cal['gating_overhead'] < 1.0, "calibration.gating_overhead must lie in [0, 1)")
    _require(cal['electronic_trace_samples'] >= 1024, "calibration.electronic_trace_samples must be >= 1024")
    _require(cal['snu_drift_per_frame'] > -0.5, "calibration.snu_drift_per_frame must be > -0.5")

    est = config['estimation']
    _require(est['z_sigma'] >= 0, "estimation.z_sigma must be >= 0")
    _require(est['min_symbols'] >= 1, "estimation.min_symbols must be >= 1")

    sec = config['security']
    _require(len(sec['n_values']) > 0 and all(n >= 1 for n in sec['n_values']),
             "security.n_values must be a non-empty list of block lengths >= 1")
    _require(sec['plob_effective_rate_hz'] > 0, "security.plob_effective_rate_hz must be positive")

    run = config['run']
    _require(run['seed'] >= 0, "run.seed must be >= 0")
    _require(run['frames'] >= 1, "run.frames must be >= 1")
    _require(run['symbols_per_frame'] >= 4096, "run.symbols_per_frame must be >= 4096")
    _require(run['threads'] is None or run['threads'] >= 1, "run.threads must be >= 1")

    try:
        receiver_params(config)
        channel_params(config)
        security_params(config)
        Referral.parse(est['referral'])
    except ValidationError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


# ============================================================================
# Builders
# ============================================================================

def receiver_params(config: Dict[str, Any]) -> ReceiverParams:
    r = config['receiver']
    responsivity, coupling = r['responsivity_a_per_w'], r['coupling_loss_db']
    if r['preset'] == 'improved':
        improved = ReceiverParams.improved()
        responsivity, coupling = improved.responsivity_a_per_w, improved.coupling_loss_db
    return ReceiverParams(
        responsivity_a_per_w=responsivity,
        wavelength_nm=r['wavelength_nm'],
        coupling_loss_db=coupling,
        extra_loss_db=r['extra_loss_db'],
        clearance_db=r['clearance_db'],
        clearance_definition=r['clearance_definition'],
        bandwidth_hz=r['bandwidth_hz']
    )


def resolve_eta(config: Dict[str, Any]) -> float:
    """Detection efficiency used by both the detector model and the estimator"""
    eta = config['security']['eta_trusted']
    if eta is None or config['receiver']['preset'] != 'measured':
        return detection_efficiency(receiver_params(config))
    return float(eta)


def electronic_transfer_db(config: Dict[str, Any]) -> float:
    """Loss-equivalent of normalizing to shot + electronic noise, 10 log10(1 + v_el)"""
    v_el = receiver_params(config).electronic_noise
    return 10.0 * math.log10(1.0 + v_el)


def channel_params(config: Dict[str, Any], length_km: Optional[float] = None) -> ChannelParams:
    """
    Channel as simulated.

    With untrusted_includes_electronic the simulated untrusted loss leaves
    room for the electronic-noise transfer, so the estimated T matches the
    key-rate accounting.
    """
    c = config['channel']
    untrusted = c['untrusted_loss_db']
    if c['untrusted_includes_electronic']:
        untrusted = max(0.0, untrusted - electronic_transfer_db(config))
    impaired = c['impairments_enabled']
    return ChannelParams(
        length_km=c['length_km'] if length_km is None else length_km,
        alpha_db_per_km=c['alpha_db_per_km'],
        untrusted_loss_db=untrusted,
        excess_noise=c['excess_noise'] if impaired else 0.0,
        cfo_hz=c['cfo_hz'],
        combined_linewidth_hz=c['combined_linewidth_hz'] if impaired else 0.0,
        crosstalk_db=c['crosstalk_db']
    )


def link_transmittance(config: Dict[str, Any], length_km: Optional[float] = None) -> float:
    """Total channel transmittance under the key-rate accounting"""
    c = config['channel']
    length = c['length_km'] if length_km is None else length_km
    return fiber_transmittance(length, c['alpha_db_per_km'], c['untrusted_loss_db'])


def security_params(config: Dict[str, Any], t_channel: Optional[float] = None,
                    n_finite: Optional[float] = None) -> SecurityParams:
    s = config['security']
    r = config['receiver']
    return SecurityParams(
        v_mod=config['tx']['v_mod'],
        t_channel=link_transmittance(config) if t_channel is None else t_channel,
        eps=config['channel']['excess_noise'] if config['channel']['impairments_enabled'] else 0.0,
        eta_trusted=resolve_eta(config),
        beta=s['beta'],
        f_rep=s['repetition_rate_hz'],
        overhead_a=s['overhead'],
        n_finite=s['n_finite'] if n_finite is None else n_finite,
        eps_smooth=s['eps_smooth'],
        referral=Referral.parse(config['estimation']['referral']),
        v_el_trusted=s['v_el_trusted'],
        z=config['estimation']['z_sigma'],
        clearance_definition=r['clearance_definition'],
        clearance_db=r['clearance_db']
    )


def worker_threads(config: Dict[str, Any]) -> int:
    """Thread cap: run.threads, else CVQKD_THREADS, else CPU count"""
    threads = config['run']['threads']
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got '{env}'") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"Thread count must be >= 1, got {threads}")
    return int(threads)

