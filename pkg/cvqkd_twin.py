#!/usr/bin/env python3
"""
cvqkd-twin - digital twin of a real-local-oscillator CV-QKD link

Copyright (C) 2026 cvqkd-twin contributors

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU General Public License for more details.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config_manager import load_config, validate_config
from experiment_runner import (
    calibrate_from_files, run_endtoend, run_keyrate, sweep_distance, sweep_header, write_sweep_csv
)
from invariant_checks import run_selftest
from qkd_errors import CvqkdError, ValidationError
from run_logger import RunLogger
from waveform_io import read_waveform

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1, the validation-error code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON configuration file')
    common.add_argument('--seed', type=int, help='Master seed')
    common.add_argument('--out', type=str, help='Output directory')
    common.add_argument('--receiver', choices=['measured', 'improved'], help='Receiver preset')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')

    parser = _Parser(
        prog='cvqkd',
        description='CV-QKD digital twin - simulate, estimate and bound secret key rates',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    simulate = sub.add_parser('simulate', parents=[common], help='Run the end-to-end simulation')
    simulate.add_argument('--frames', type=int, help='Number of frames')
    simulate.add_argument('--symbols-per-frame', type=int, help='Symbols per frame')
    simulate.add_argument('--save-waveforms', action='store_true',
                          help='Write the electronic and frame-0 gated traces for `calibrate`')
    simulate.add_argument('--log-dir', type=str, help='Run event log directory')

    sub.add_parser('keyrate', parents=[common], help='Key rates from parameters only')

    sweep = sub.add_parser('sweep', parents=[common], help='Key rate versus distance table')
    sweep.add_argument('--from', dest='start', type=float, default=0.0, help='First distance (km)')
    sweep.add_argument('--to', dest='stop', type=float, default=50.0, help='Last distance (km)')
    sweep.add_argument('--step', type=float, default=1.0, help='Distance step (km)')

    calibrate = sub.add_parser('calibrate', parents=[common], help='SNU calibration from waveform files')
    calibrate.add_argument('--elec', type=str, required=True, help='LO-off electronic noise trace')
    calibrate.add_argument('--gated', type=str, required=True, help='Gated trace with calibration slots')
    calibrate.add_argument('--overhead', type=float, help='Gating overhead (default from config)')
    calibrate.add_argument('--calib-slot-samples', type=int, help='Calibration slot length in samples')

    sub.add_parser('selftest', parents=[common], help='Run the fast invariant checks')
    return parser


def _configure(args) -> dict:
    cfg = load_config(args.config)
    run = cfg['run']
    if args.seed is not None:
        run['seed'] = args.seed
    if args.out is not None:
        run['out_dir'] = args.out
    if getattr(args, 'frames', None) is not None:
        run['frames'] = args.frames
    if getattr(args, 'symbols_per_frame', None) is not None:
        run['symbols_per_frame'] = args.symbols_per_frame
    if args.receiver is not None:
        cfg['receiver']['preset'] = args.receiver
    validate_config(cfg)
    return cfg


def _write_json(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + '\n')
    return path


def _sweep_range(start: float, stop: float, step: float) -> List[float]:
    if step <= 0:
        raise ValidationError(f"Step must be positive, got {step}")
    if stop < start:
        raise ValidationError(f"--to ({stop}) is below --from ({start})")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


def cmd_simulate(cfg: dict, args) -> int:
    out = Path(cfg['run']['out_dir'])
    run_logger = RunLogger(Path(args.log_dir) if args.log_dir else None)
    waveform_dir = out / 'waveforms' if args.save_waveforms else None
    report = run_endtoend(cfg, run_logger, waveform_dir)
    path = _write_json(out / 'report.json', report.to_json())

    print(f"\n{'=' * 60}")
    print(f"End-to-end simulation (seed {cfg['run']['seed']})")
    print(f"{'=' * 60}")
    print(f"Frames:       {report.samples['frames_ok']}/{report.samples['frames_requested']} ok")
    if report.estimate is not None:
        est = report.estimate
        print(f"T_hat:        {est.T_hat:.5f}  (injected {report.injected['T_expected']:.5f})")
        print(f"eps_hat:      {est.eps_hat:.4f} ± {est.sigma_eps:.4f} SNU  "
              f"(injected {report.injected['excess_noise']:.4f})")
    if report.key_rate is not None:
        print(f"K_asym:       {report.key_rate.k_asym / 1e6:.3f} Mbps")
        print(f"K_finite:     {report.key_rate.k_finite / 1e6:.3f} Mbps")
    for failure in report.failures:
        print(f"❌ {failure['stage']} failed on frame {failure['frame_id']}: {failure['message']}")
    print(f"Report:       {path}")

    if report.ok:
        print("✅ Simulation complete")
        return EXIT_OK
    return EXIT_FAILURE


def cmd_keyrate(cfg: dict, args) -> int:
    report = run_keyrate(cfg)
    path = _write_json(Path(cfg['run']['out_dir']) / 'keyrate.json',
                       json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"I_AB:         {report.i_ab:.6f} bit/symbol")
    print(f"chi_BE:       {report.chi_be:.6f} bit/symbol")
    print(f"Delta(n):     {report.delta_n:.3e}")
    print(f"K_asym:       {report.k_asym / 1e6:.3f} Mbps")
    print(f"K_finite:     {report.k_finite / 1e6:.3f} Mbps")
    if report.below_threshold_asym:
        print("⚠️  Asymptotic key fraction is not positive")
    print(f"Report:       {path}")
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    distances = _sweep_range(args.start, args.stop, args.step)
    rows = sweep_distance(cfg, distances)
    path = write_sweep_csv(rows, sweep_header(cfg), Path(cfg['run']['out_dir']) / 'sweep.csv')
    print(f"✅ {len(rows)} rows written to {path}")
    return EXIT_OK


def cmd_calibrate(cfg: dict, args) -> int:
    elec = read_waveform(args.elec)
    gated = read_waveform(args.gated)
    record = calibrate_from_files(cfg, elec, gated, args.overhead, args.calib_slot_samples)
    path = _write_json(Path(cfg['run']['out_dir']) / 'calibration.json',
                       json.dumps(record.to_dict(), indent=2, sort_keys=True))
    print(f"SNU scale:        {record.snu_scale:.6g}")
    print(f"Electronic share: {record.electronic_share:.4f}")
    print(f"Calibration slots: {len(record.slot_ids)}")
    print(f"Record:           {path}")
    return EXIT_OK


def cmd_selftest(cfg: dict, args) -> int:
    return EXIT_OK if run_selftest() else EXIT_FAILURE


COMMANDS = {
    'simulate': cmd_simulate,
    'keyrate': cmd_keyrate,
    'sweep': cmd_sweep,
    'calibrate': cmd_calibrate,
    'selftest': cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s'
    )

    try:
        cfg = _configure(args)
        return COMMANDS[args.command](cfg, args)
    except ValidationError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_INVALID
    except CvqkdError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
