#!/usr/bin/env python3
"""
Tests for the cvqkd command line
"""

import csv
import json

import numpy as np
import pytest

from channel_model import ReceiverParams, heterodyne_detect
from cvqkd_twin import EXIT_FAILURE, EXIT_INVALID, EXIT_OK, main
from signal_core import RngStream, Waveform
from waveform_io import write_waveform


def test_keyrate_command(tmp_path):
    assert main(['keyrate', '--out', str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / 'keyrate.json').read_text())
    assert 1.2e6 < report['k_asym'] < 1.7e6
    assert report['conventions']['referral'] == 'input-referred'


def test_keyrate_with_improved_receiver(tmp_path):
    assert main(['keyrate', '--out', str(tmp_path / 'a')]) == EXIT_OK
    assert main(['keyrate', '--receiver', 'improved', '--out', str(tmp_path / 'b')]) == EXIT_OK
    measured = json.loads((tmp_path / 'a' / 'keyrate.json').read_text())
    improved = json.loads((tmp_path / 'b' / 'keyrate.json').read_text())
    assert improved['k_asym'] > measured['k_asym']


def test_sweep_command(tmp_path):
    assert main(['sweep', '--out', str(tmp_path), '--to', '10', '--step', '5']) == EXIT_OK
    with open(tmp_path / 'sweep.csv') as f:
        rows = list(csv.reader(f))
    assert rows[0][:3] == ['distance_km', 'T', 'K_asym']
    assert [float(r[0]) for r in rows[1:]] == [0.0, 5.0, 10.0]


def test_invalid_input_exits_with_one(tmp_path):
    assert main(['sweep', '--out', str(tmp_path), '--step', '0']) == EXIT_INVALID
    assert main(['sweep', '--out', str(tmp_path), '--from', '10', '--to', '5']) == EXIT_INVALID
    assert main(['simulate', '--frames', '0', '--out', str(tmp_path)]) == EXIT_INVALID
    assert main(['keyrate', '--config', str(tmp_path / 'missing.json')]) == EXIT_INVALID
    with pytest.raises(SystemExit) as exc:
        main(['teleport'])
    assert exc.value.code == EXIT_INVALID


def test_simulate_command(tmp_path):
    overlay = {
        'run': {'symbols_per_frame': 16384, 'frames': 1, 'threads': 1},
        'receiver': {'noise_enabled': False}
    }
    config = tmp_path / 'config.json'
    config.write_text(json.dumps(overlay))
    out = tmp_path / 'out'
    code = main(['simulate', '--config', str(config), '--out', str(out), '--log-dir', str(tmp_path / 'log')])
    assert code == EXIT_OK
    report = json.loads((out / 'report.json').read_text())
    assert report['samples']['frames_ok'] == 1
    assert report['key_rate'] is not None


def test_simulate_failure_exits_with_two(tmp_path):
    overlay = {
        'run': {'symbols_per_frame': 16384, 'frames': 1, 'threads': 1},
        'receiver': {'noise_enabled': False},
        'rx': {'sync_threshold': 1.0}
    }
    config = tmp_path / 'config.json'
    config.write_text(json.dumps(overlay))
    code = main(['simulate', '--config', str(config), '--out', str(tmp_path / 'out'),
                 '--log-dir', str(tmp_path / 'log')])
    assert code == EXIT_FAILURE


def test_calibrate_command(tmp_path):
    rx = ReceiverParams()
    n = 1 << 18
    silent = Waveform(np.zeros(n), 5e9)
    elec, _ = heterodyne_detect(silent, silent, rx, RngStream(1, 'elec'), lo_on=False)
    gated, _ = heterodyne_detect(silent, silent, rx, RngStream(1, 'gated'))
    write_waveform(tmp_path / 'elec.cvwf', elec)
    write_waveform(tmp_path / 'gated.cvwf', gated)

    code = main(['calibrate', '--elec', str(tmp_path / 'elec.cvwf'), '--gated', str(tmp_path / 'gated.cvwf'),
                 '--overhead', '0.5', '--calib-slot-samples', str(1 << 14), '--out', str(tmp_path)])
    assert code == EXIT_OK
    record = json.loads((tmp_path / 'calibration.json').read_text())
    assert abs(record['snu_scale'] / (1 + rx.electronic_noise) - 1.0) < 0.02
    assert len(record['slot_ids']) == 8

    assert main(['calibrate', '--elec', str(tmp_path / 'nope.cvwf'), '--gated', str(tmp_path / 'gated.cvwf'),
                 '--out', str(tmp_path)]) == EXIT_INVALID


def test_selftest_command(capsys):
    assert main(['selftest']) == EXIT_OK
    out = capsys.readouterr().out
    assert '12/12 checks passed' in out
    assert '❌' not in out
