#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Fast invariant checks behind `cvqkd selftest`.

Each check returns (passed, detail). The full statistical suites live in the
test files; these run in a few seconds on the default configuration.
"""

import logging
import math
from typing import Callable, List, Tuple

import numpy as np

from channel_model import ReceiverParams, detection_efficiency, electronic_noise_from_clearance
from config_manager import default_config, link_transmittance
from experiment_runner import run_keyrate, sweep_distance
from key_rate_engine import (
    covariance_matrix, heterodyne_conditional, plob_bound, secret_key_rate,
    symplectic_eigenvalues, symplectic_spectrum, trusted_detection
)
from rx_dsp import estimate_frequency_offset
from signal_core import (
    RngStream, Waveform, box_muller, db_to_linear, design_rrc, ideal_bandpass, linear_to_db
)

logger = logging.getLogger(__name__)

Check = Tuple[str, Callable[[], Tuple[bool, str]]]


def check_detection_efficiency() -> Tuple[bool, str]:
    eta = detection_efficiency(ReceiverParams())
    return 0.2265 <= eta <= 0.2275, f"eta = {eta:.5f}"


def check_decibel_round_trip() -> Tuple[bool, str]:
    values = np.linspace(-100.0, 100.0, 201)
    worst = max(abs(float(linear_to_db(db_to_linear(v))) - v) / max(abs(v), 1.0) for v in values)
    return worst < 1e-12, f"worst relative error {worst:.2e}"


def check_box_muller() -> Tuple[bool, str]:
    z1, z2 = box_muller(math.exp(-0.5), 0.0)
    ok = math.isclose(z1, 1.0, abs_tol=1e-12) and abs(z2) < 1e-12
    return ok, f"({z1:.6f}, {z2:.6f})"


def check_rrc_nyquist() -> Tuple[bool, str]:
    sps = 4
    taps = design_rrc(0.3, 32, sps)
    cascade = np.convolve(taps, taps)
    centre = cascade.size // 2
    lags = cascade[centre % sps::sps]
    main = cascade[centre]
    off = np.delete(lags, centre // sps)
    worst = float(np.max(np.abs(off)) / main)
    return worst < 1e-3 and math.isclose(main, 1.0, rel_tol=1e-9), f"largest off-centre {worst:.2e}"


def check_bandpass_idempotent() -> Tuple[bool, str]:
    gen = RngStream(1, 'selftest').generator()
    w = Waveform(gen.standard_normal(4096), 5e9)
    once = ideal_bandpass(w, 800e6, 400e6)
    twice = ideal_bandpass(once, 800e6, 400e6)
    err = float(np.max(np.abs(twice.samples - once.samples)))
    return err < 1e-12, f"max difference {err:.2e}"


def check_frequency_estimate() -> Tuple[bool, str]:
    fs = 5e9
    n = 1 << 16
    gen = RngStream(2, 'selftest').generator()
    bin_width = fs / n
    f0 = 1.5e9 + gen.uniform(-20.0, 20.0) * bin_width
    t = np.arange(n) / fs
    noise = math.sqrt(0.5 * 10.0 ** (-30.0 / 10.0))
    trace = Waveform(np.cos(2 * np.pi * f0 * t) + noise * gen.standard_normal(n), fs)
    f_hat = estimate_frequency_offset(trace, (1.4e9, 1.6e9))
    err = abs(f_hat - f0) / bin_width
    return err < 0.1, f"error {err:.3f} bins"


def check_symplectic_spectrum() -> Tuple[bool, str]:
    gen = RngStream(3, 'selftest').generator()
    worst = 0.0
    for _ in range(200):
        v_mod = gen.uniform(0.5, 20.0)
        t = gen.uniform(0.01, 0.95)
        eps = gen.uniform(0.005, 0.2)
        eta = gen.uniform(0.1, 1.0)
        closed = symplectic_eigenvalues(v_mod, t, eps, eta)
        cov = covariance_matrix(v_mod, t, eps)
        nu2, nu1 = symplectic_spectrum(cov)
        _, nu4, nu3 = symplectic_spectrum(heterodyne_conditional(trusted_detection(cov, eta)))
        worst = max(worst, *(abs(c - n) / n for c, n in zip(closed, (nu1, nu2, nu3, nu4))))
    return worst < 1e-6, f"largest relative deviation {worst:.2e}"


def check_rate_formula() -> Tuple[bool, str]:
    k = secret_key_rate(1e9, 0.5, 1.0, 0.00276, 0.0, 0.0)
    return math.isclose(k, 1.38e6, rel_tol=1e-12), f"K = {k / 1e6:.4f} Mbps"


def check_plob_reference() -> Tuple[bool, str]:
    cfg = default_config()
    k = plob_bound(link_transmittance(cfg, 28.6), 5e8)
    return math.isclose(k, 63.8e6, rel_tol=1e-3), f"K_PLOB = {k / 1e6:.2f} Mbps"


def check_operating_point() -> Tuple[bool, str]:
    report = run_keyrate(default_config())
    ok = 1.2e6 < report.k_asym < 1.7e6 and report.k_finite < report.k_asym and bool(report.conventions)
    return ok, f"K_asym = {report.k_asym / 1e6:.2f} Mbps, K_finite = {report.k_finite / 1e6:.2f} Mbps"


def check_sweep_ordering() -> Tuple[bool, str]:
    cfg = default_config()
    rows = sweep_distance(cfg, np.arange(0.0, 51.0, 5.0))
    columns = list(zip(*[r.as_list()[2:] for r in rows]))
    monotone = all(all(b <= a for a, b in zip(col, col[1:])) for col in columns)
    bounded = all(r.k_plob >= max(r.k_asym, *r.k_finite.values()) for r in rows)
    # finite-size columns cut off inside the range, the asymptotic one does not
    cut_off = rows[-1].k_asym > 0.0 and all(k == 0.0 for k in rows[-1].k_finite.values())
    return monotone and bounded and cut_off, f"monotone={monotone}, plob above={bounded}, cut-off={cut_off}"


def check_electronic_share() -> Tuple[bool, str]:
    v_el = electronic_noise_from_clearance(7.42, 'total')
    share = v_el / (1.0 + v_el)
    return abs(share - 0.1812) / 0.1812 < 0.02, f"share = {share:.4f}"


CHECKS: List[Check] = [
    ('Detection efficiency composition', check_detection_efficiency),
    ('dB round trip', check_decibel_round_trip),
    ('Box-Muller reference point', check_box_muller),
    ('RRC Nyquist-ISI', check_rrc_nyquist),
    ('Ideal bandpass idempotence', check_bandpass_idempotent),
    ('Frequency offset estimator', check_frequency_estimate),
    ('Symplectic spectrum agreement', check_symplectic_spectrum),
    ('Rate formula', check_rate_formula),
    ('PLOB reference', check_plob_reference),
    ('Operating-point key rate', check_operating_point),
    ('Sweep ordering', check_sweep_ordering),
    ('Electronic noise share', check_electronic_share),
]


def run_selftest(checks: List[Check] = None) -> bool:
    """Run every check, print one line each, return True when all pass"""
    checks = CHECKS if checks is None else checks
    failed = 0
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as e:
            logger.debug("Check %s raised", name, exc_info=True)
            passed, detail = False, f"{type(e).__name__}: {e}"
        mark = '✅' if passed else '❌'
        print(f"{mark} {name:<34} {detail}")
        failed += 0 if passed else 1

    print(f"\n{len(checks) - failed}/{len(checks)} checks passed")
    return failed == 0
