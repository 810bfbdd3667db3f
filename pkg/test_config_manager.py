#!/usr/bin/env python3
"""
Tests for configuration loading, validation and the parameter builders
"""

import json
import math

import pytest

from channel_estimator import Referral
from config_manager import (
    DEFAULT_CONFIG, THREADS_ENV, channel_params, default_config, export_config, link_transmittance,
    load_config, resolve_eta, save_config, security_params, validate_config, worker_threads
)
from qkd_errors import ConfigError, ValidationError


def _write(tmp_path, overlay):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(overlay))
    return path


def test_defaults_validate():
    cfg = load_config()
    validate_config(cfg)
    cfg['run']['seed'] = 99
    assert DEFAULT_CONFIG['run']['seed'] == 7


def test_overlay_merges_over_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, {'channel': {'length_km': 10}, 'run': {'frames': 2}}))
    assert cfg['channel']['length_km'] == 10
    assert cfg['channel']['excess_noise'] == 0.055
    assert cfg['run']['frames'] == 2


def test_load_rejects_bad_documents(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json')
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, [1, 2]))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {'channel': {'lenght_km': 10}}))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {'run': 3}))


@pytest.mark.parametrize('section,key,value', [
    ('run', 'frames', 'eight'),
    ('run', 'frames', 1.5),
    ('channel', 'impairments_enabled', 1),
    ('tx', 'v_mod', None),
    ('tx', 'v_mod', -1.0),
    ('tx', 'rolloff', 1.5),
    ('tx', 'training_ratio', 0.0),
    ('tx', 'training_ratio', 0.6),
    ('tx', 'pilot_frequency_hz', 200e6),
    ('tx', 'sample_rate_hz', 4e9),
    ('rx', 'equalizer_taps', 20),
    ('rx', 'equalizer_mode', 'rls'),
    ('receiver', 'preset', 'prototype'),
    ('calibration', 'gating_overhead', 1.0),
    ('estimation', 'referral', 'middle'),
    ('security', 'beta', 1.2),
    ('security', 'n_values', []),
    ('run', 'symbols_per_frame', 1000),
])
def test_invalid_values_are_rejected(section, key, value):
    cfg = default_config()
    cfg[section][key] = value
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_config_error_is_a_validation_error():
    assert issubclass(ConfigError, ValidationError)


def test_nullable_keys():
    cfg = default_config()
    cfg['tx']['residual_carrier_dbc'] = None
    cfg['security']['eta_trusted'] = None
    cfg['run']['threads'] = None
    cfg['tx']['training_ratio'] = 0.5
    validate_config(cfg)


def test_eta_resolution():
    cfg = default_config()
    assert resolve_eta(cfg) == 0.2271
    cfg['security']['eta_trusted'] = None
    assert abs(resolve_eta(cfg) - 0.2270) < 2e-4
    cfg['security']['eta_trusted'] = 0.2271
    cfg['receiver']['preset'] = 'improved'
    assert resolve_eta(cfg) > 0.45


def test_channel_leaves_room_for_electronic_transfer():
    cfg = default_config()
    params = channel_params(cfg)
    assert math.isclose(params.untrusted_loss_db, 5.0 - 10 * math.log10(1.2212), abs_tol=2e-3)
    cfg['channel']['untrusted_includes_electronic'] = False
    assert channel_params(cfg).untrusted_loss_db == 5.0
    assert channel_params(cfg, length_km=3.0).length_km == 3.0


def test_disabled_impairments_zero_noise_and_linewidth():
    cfg = default_config()
    cfg['channel']['impairments_enabled'] = False
    params = channel_params(cfg)
    assert params.excess_noise == 0.0
    assert params.combined_linewidth_hz == 0.0
    assert security_params(cfg).eps == 0.0


def test_link_transmittance_and_security_params():
    cfg = default_config()
    assert math.isclose(link_transmittance(cfg), 10 ** (-1.072), rel_tol=1e-12)
    assert link_transmittance(cfg, 0.0) < 1.0
    p = security_params(cfg, n_finite=math.inf)
    assert p.n_finite == math.inf
    assert p.referral is Referral.INPUT
    assert p.v_mod == 8.0
    assert p.z == 6.5


def test_worker_threads(monkeypatch):
    cfg = default_config()
    cfg['run']['threads'] = 3
    assert worker_threads(cfg) == 3
    cfg['run']['threads'] = None
    monkeypatch.setenv(THREADS_ENV, '2')
    assert worker_threads(cfg) == 2
    monkeypatch.setenv(THREADS_ENV, 'many')
    with pytest.raises(ConfigError):
        worker_threads(cfg)
    monkeypatch.delenv(THREADS_ENV)
    assert worker_threads(cfg) >= 1


def test_save_and_export(tmp_path):
    cfg = default_config()
    cfg['run']['seed'] = 11
    path = tmp_path / 'nested' / 'saved.json'
    assert save_config(cfg, path)
    assert load_config(path)['run']['seed'] == 11
    assert json.loads(export_config(cfg)) == cfg
