#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Key Rate Engine - mutual information, Holevo bound and secret key rate

Gaussian entangling-cloner model with a trusted detector and heterodyne
detection, reverse reconciliation:

    K = f * (1 - a) * max(0, beta * I_AB - chi_BE - Delta(n))

The detector is a beam splitter of transmittance eta whose loss port F (and,
with trusted electronic noise, the EPR partner G of its noise input) stays
with Bob, so chi_BE = S(AB) - S(AFG | b).

Asymptotic rates use point estimates with Delta = 0. Finite-size rates use
worst-case parameters (t_min, eps_max) in both I_AB and chi_BE plus Delta(n).
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import xlogy

from channel_estimator import (ChannelEstimate, Referral, analytic_bounds,
                               worst_case_bounds)
from channel_model import CLEARANCE_DEFINITIONS, electronic_noise_from_clearance
from qkd_errors import UnphysicalStateError, ValidationError

logger = logging.getLogger(__name__)

HOLEVO_MODEL = 'entangling-cloner/trusted-detector-purified/heterodyne'
FINITE_SIZE_MODEL = '7*sqrt(log2(2/eps_smooth)/n)'
PHYSICAL_TOLERANCE = 1e-9

OMEGA_2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
PAULI_Z = np.diag([1.0, -1.0])


@dataclass
class SecurityParams:
    v_mod: float = 8.0
    t_channel: float = 0.08472
    eps: float = 0.055
    eta_trusted: float = 0.2271
    beta: float = 0.956
    f_rep: float = 1e9
    overhead_a: float = 0.5
    n_finite: float = 1e9
    eps_smooth: float = 1e-10
    referral: Referral = Referral.INPUT
    v_el_trusted: float = 0.0
    z: float = 6.5
    clearance_definition: str = 'total'
    clearance_db: float = 7.42

    def __post_init__(self):
        self.referral = Referral.parse(self.referral)
        if not self.v_mod > 0:
            raise ValidationError(f"v_mod must be positive, got {self.v_mod}")
        if not 0.0 <= self.t_channel <= 1.0:
            raise ValidationError(f"Channel transmittance must lie in [0, 1], got {self.t_channel}")
        if self.eps < 0:
            raise ValidationError(f"Excess noise must be >= 0, got {self.eps}")
        if not 0.0 < self.eta_trusted <= 1.0:
            raise ValidationError(f"Trusted efficiency must lie in (0, 1], got {self.eta_trusted}")
        if not 0.0 < self.beta <= 1.0:
            raise ValidationError(f"Reconciliation efficiency must lie in (0, 1], got {self.beta}")
        if not self.f_rep > 0:
            raise ValidationError(f"Repetition rate must be positive, got {self.f_rep}")
        if not 0.0 <= self.overhead_a < 1.0:
            raise ValidationError(f"Overhead must lie in [0, 1), got {self.overhead_a}")
        if not self.n_finite >= 1:
            raise ValidationError(f"Block length must be >= 1, got {self.n_finite}")
        if not 0.0 < self.eps_smooth < 1.0:
            raise ValidationError(f"Smoothing parameter must lie in (0, 1), got {self.eps_smooth}")
        if self.v_el_trusted < 0:
            raise ValidationError(f"Trusted electronic noise must be >= 0, got {self.v_el_trusted}")
        if self.v_el_trusted > 0 and self.eta_trusted >= 1.0:
            raise ValidationError("Trusted electronic noise needs a detection efficiency below 1")
        if self.z < 0:
            raise ValidationError(f"Confidence multiplier must be >= 0, got {self.z}")

    @property
    def eps_input(self) -> float:
        """Excess noise referred to the channel input"""
        if self.referral is Referral.INPUT:
            return self.eps
        if self.t_channel == 0.0:
            return 0.0
        return self.eps / self.t_channel

    def to_dict(self) -> dict:
        data = asdict(self)
        data['referral'] = self.referral.value
        if math.isinf(self.n_finite):
            data['n_finite'] = 'inf'
        return data


@dataclass
class KeyRateReport:
    i_ab: float
    chi_be: float
    delta_n: float
    k_asym: float
    k_finite: float
    i_ab_finite: float
    chi_be_finite: float
    t_point: float
    eps_point: float
    t_worst: float
    eps_worst: float
    below_threshold_asym: bool
    below_threshold_finite: bool
    aborted: bool
    conventions: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, Any] = field(default_factory=dict)
    variants: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'KeyRateReport':
        return cls(**data)


# ============================================================================
# Entropy and information terms
# ============================================================================

def g_function(x: float) -> float:
    """G(x) = (x+1) log2(x+1) - x log2(x), the entropy of a thermal state with mean photon number x"""
    if x < 0:
        if x > -PHYSICAL_TOLERANCE:
            x = 0.0
        else:
            raise ValidationError(f"G is defined for x >= 0, got {x}")
    return float((xlogy(x + 1.0, x + 1.0) - xlogy(x, x)) / math.log(2.0))


def mutual_information(p: SecurityParams) -> float:
    """Heterodyne Shannon rate log2(1 + SNR) in bits per symbol"""
    eta_t = p.eta_trusted * p.t_channel
    snr = (eta_t * p.v_mod / 2.0) / (1.0 + eta_t * p.eps_input / 2.0 + p.v_el_trusted)
    return math.log2(1.0 + snr)


def covariance_entries(v_mod: float, t: float, eps_in: float) -> Tuple[float, float, float]:
    """(a, b, c) of the Alice-Bob state before the trusted detector"""
    v = v_mod + 1.0
    return v, t * (v - 1.0 + eps_in) + 1.0, math.sqrt(t * (v * v - 1.0))


def _two_mode_spectrum(x: float, y: float, z: float) -> Tuple[float, float]:
    """Symplectic eigenvalues of [[xI, zZ], [zZ, yI]], larger first"""
    # nu+ + nu- = sqrt((x+y)^2 - 4z^2) and nu+ - nu- = |x - y|
    total = math.sqrt(max((x + y) ** 2 - 4.0 * z * z, 0.0))
    return (total + abs(x - y)) / 2.0, (total - abs(x - y)) / 2.0


def symplectic_eigenvalues(v_mod: float, t: float, eps_in: float,
                           eta: float) -> Tuple[float, float, float, float]:
    """
    Closed-form (nu1, nu2, nu3, nu4) without trusted electronic noise.

    nu1, nu2 belong to the Alice-Bob state. nu3, nu4 belong to Alice and the
    detector loss port F conditioned on Bob's heterodyne outcome; at eta = 1
    F is vacuum, nu4 = 1 and nu3 = a - c_d^2 / (b_d + 1).
    """
    a, b, c = covariance_entries(v_mod, t, eps_in)
    nu1, nu2 = _two_mode_spectrum(a, b, c)

    b_d = eta * (b - 1.0) + 1.0
    f = (1.0 - eta) * b + eta
    m = -math.sqrt(eta * (1.0 - eta)) * (b - 1.0)
    x = a - eta * c * c / (b_d + 1.0)
    y = f - m * m / (b_d + 1.0)
    z = -c * (math.sqrt(1.0 - eta) + math.sqrt(eta) * m / (b_d + 1.0))
    nu3, nu4 = _two_mode_spectrum(x, y, z)
    return nu1, nu2, nu3, nu4


def covariance_matrix(v_mod: float, t: float, eps_in: float) -> np.ndarray:
    """4x4 Alice-Bob covariance matrix [[aI, cZ], [cZ, bI]]"""
    a, b, c = covariance_entries(v_mod, t, eps_in)
    eye = np.eye(2)
    return np.block([[a * eye, c * PAULI_Z], [c * PAULI_Z, b * eye]])


def trusted_detection(cov: np.ndarray, eta: float, v_el: float = 0.0) -> np.ndarray:
    """
    8x8 covariance of modes (A, B, F, G) after Bob's trusted detector.

    B is mixed with a thermal input F0 on a beam splitter of transmittance
    eta; F is the other output and G purifies F0. The F0 variance
    1 + 2 v_el / (1 - eta) adds 2 v_el to B, the heterodyne input-mode
    equivalent of v_el per output quadrature.
    """
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"Trusted efficiency must lie in (0, 1], got {eta}")
    if v_el < 0:
        raise ValidationError(f"Trusted electronic noise must be >= 0, got {v_el}")
    if v_el > 0 and eta >= 1.0:
        raise ValidationError("Trusted electronic noise needs a detection efficiency below 1")
    w = 1.0 + (2.0 * v_el / (1.0 - eta) if v_el > 0 else 0.0)
    s = math.sqrt(w * w - 1.0)
    eye = np.eye(2)

    full = np.zeros((8, 8))
    full[:4, :4] = cov
    full[4:6, 4:6] = full[6:, 6:] = w * eye
    full[4:6, 6:] = full[6:, 4:6] = s * PAULI_Z

    r, q = math.sqrt(eta), math.sqrt(1.0 - eta)
    splitter = np.eye(8)
    splitter[2:4, 2:4] = splitter[4:6, 4:6] = r * eye
    splitter[2:4, 4:6] = q * eye
    splitter[4:6, 2:4] = -q * eye
    return splitter @ full @ splitter.T


def symplectic_spectrum(cov: np.ndarray) -> np.ndarray:
    """Symplectic eigenvalues of a 2m x 2m covariance matrix, ascending"""
    modes = cov.shape[0] // 2
    omega = np.kron(np.eye(modes), OMEGA_2)
    eig = np.sort(np.abs(np.linalg.eigvals(1j * omega @ cov)))
    return eig[::2]


def heterodyne_conditional(cov: np.ndarray, mode: int = 1) -> np.ndarray:
    """
    Covariance of the other modes conditioned on a heterodyne outcome of
    `mode`: gamma_R - sigma (gamma_M + I)^-1 sigma^T.
    """
    measured = [2 * mode, 2 * mode + 1]
    rest = [i for i in range(cov.shape[0]) if i not in measured]
    gamma_r = cov[np.ix_(rest, rest)]
    sigma = cov[np.ix_(rest, measured)]
    gamma_m = cov[np.ix_(measured, measured)]
    return gamma_r - sigma @ np.linalg.inv(gamma_m + np.eye(2)) @ sigma.T


def holevo_bound(p: SecurityParams) -> float:
    """chi_BE = G((nu1-1)/2) + G((nu2-1)/2) - sum of G((nu_k-1)/2) over the conditional spectrum"""
    nu1, nu2, nu3, nu4 = symplectic_eigenvalues(p.v_mod, p.t_channel, p.eps_input, p.eta_trusted)
    if p.v_el_trusted > 0:
        cov = trusted_detection(covariance_matrix(p.v_mod, p.t_channel, p.eps_input),
                                p.eta_trusted, p.v_el_trusted)
        conditional = tuple(float(nu) for nu in symplectic_spectrum(heterodyne_conditional(cov)))
    else:
        conditional = (nu3, nu4)
    for nu in (nu1, nu2, *conditional):
        if nu < 1.0 - PHYSICAL_TOLERANCE:
            raise UnphysicalStateError(
                f"Symplectic eigenvalue {nu:.12f} < 1 at T={p.t_channel}, eps={p.eps_input}")
    entropy_e = sum(g_function((max(nu, 1.0) - 1.0) / 2.0) for nu in (nu1, nu2))
    entropy_cond = sum(g_function((max(nu, 1.0) - 1.0) / 2.0) for nu in conditional)
    return max(entropy_e - entropy_cond, 0.0)


def finite_size_delta(n: float, eps_smooth: float = 1e-10) -> float:
    if not n >= 1:
        raise ValidationError(f"Block length must be >= 1, got {n}")
    if not 0.0 < eps_smooth < 1.0:
        raise ValidationError(f"Smoothing parameter must lie in (0, 1), got {eps_smooth}")
    if math.isinf(n):
        return 0.0
    return 7.0 * math.sqrt(math.log2(2.0 / eps_smooth) / n)


def key_fraction(beta: float, i_ab: float, chi_be: float, delta: float) -> float:
    """Unclamped secret bits per symbol, beta*I - chi - Delta"""
    return beta * i_ab - chi_be - delta


def secret_key_rate(f: float, a: float, beta: float, i_ab: float, chi_be: float, delta: float) -> float:
    """K = f (1 - a) max(0, beta I - chi - Delta) in bit/s"""
    if not f > 0:
        raise ValidationError(f"Repetition rate must be positive, got {f}")
    if not 0.0 <= a < 1.0:
        raise ValidationError(f"Overhead must lie in [0, 1), got {a}")
    if not 0.0 < beta <= 1.0:
        raise ValidationError(f"Reconciliation efficiency must lie in (0, 1], got {beta}")
    return f * (1.0 - a) * max(0.0, key_fraction(beta, i_ab, chi_be, delta))


def plob_bound(t_total: float, f_eff: float) -> float:
    """Repeaterless capacity -log2(1 - T) scaled to bit/s"""
    if not 0.0 < t_total < 1.0:
        raise ValidationError(f"PLOB bound needs transmittance in (0, 1), got {t_total}")
    if not f_eff > 0:
        raise ValidationError(f"Effective rate must be positive, got {f_eff}")
    return f_eff * (-math.log1p(-t_total) / math.log(2.0))


# ============================================================================
# Pipeline
# ============================================================================

def _rate_at(p: SecurityParams, t: float, eps_in: float, delta: float) -> Tuple[float, float, float]:
    q = replace(p, t_channel=t, eps=eps_in, referral=Referral.INPUT)
    i_ab = mutual_information(q)
    chi = holevo_bound(q)
    return i_ab, chi, secret_key_rate(p.f_rep, p.overhead_a, p.beta, i_ab, chi, delta)


def _to_input_referred(eps: float, t: float, referral: Referral) -> float:
    if referral is Referral.INPUT or t == 0.0:
        return eps
    return eps / t


def _bounds_for(p: SecurityParams, est: Optional[ChannelEstimate]) -> ChannelEstimate:
    if est is not None:
        if est.referral is not p.referral:
            raise ValidationError(
                f"Estimate referral {est.referral.value} differs from parameters {p.referral.value}")
        return worst_case_bounds(est, p.z)
    return analytic_bounds(p.t_channel, p.eps, p.eta_trusted, p.v_mod, p.n_finite, p.z, p.referral)


def key_rate_pipeline(p: SecurityParams, est: Optional[ChannelEstimate] = None) -> KeyRateReport:
    """
    Asymptotic and finite-size key rates.

    With an estimate the point values come from it and the finite-size
    bounds from its own standard errors. Without one, the exact parameters
    are used and the bounds are those expected for an n_finite-symbol block.
    """
    if est is not None:
        t_point = est.T_hat
        eps_point = max(est.eps_hat, 0.0)
        if not 0.0 < t_point <= 1.0:
            raise ValidationError(f"Estimated transmittance {t_point:.4g} is outside (0, 1]")
    else:
        t_point, eps_point = p.t_channel, p.eps
    eps_point_in = _to_input_referred(eps_point, t_point, p.referral)

    i_ab, chi, k_asym = _rate_at(p, t_point, eps_point_in, 0.0)
    below_asym = key_fraction(p.beta, i_ab, chi, 0.0) <= 0.0

    delta = finite_size_delta(p.n_finite, p.eps_smooth)
    aborted = False
    if math.isinf(p.n_finite) and est is None:
        t_worst, eps_worst_in = t_point, eps_point_in
        i_fin, chi_fin, k_fin = i_ab, chi, k_asym
        below_fin = below_asym
    else:
        bounds = _bounds_for(p, est)
        aborted = bounds.aborted
        if aborted:
            t_worst, eps_worst_in = 0.0, math.inf
            i_fin, chi_fin, k_fin = 0.0, 0.0, 0.0
            below_fin = True
        else:
            t_worst = min(bounds.T_min, 1.0)
            eps_worst_in = _to_input_referred(max(bounds.eps_max, 0.0), t_worst, p.referral)
            i_fin, chi_fin, k_fin = _rate_at(p, t_worst, eps_worst_in, delta)
            below_fin = key_fraction(p.beta, i_fin, chi_fin, delta) <= 0.0

    if below_asym:
        logger.info("Asymptotic key fraction is not positive at T=%.5g, eps=%.4g", t_point, eps_point_in)

    report = KeyRateReport(
        i_ab=i_ab, chi_be=chi, delta_n=delta, k_asym=k_asym, k_finite=k_fin,
        i_ab_finite=i_fin, chi_be_finite=chi_fin,
        t_point=t_point, eps_point=eps_point_in, t_worst=t_worst, eps_worst=eps_worst_in,
        below_threshold_asym=below_asym, below_threshold_finite=below_fin, aborted=aborted,
        conventions=convention_record(p), inputs=p.to_dict(),
        variants=convention_variants(p) if est is None else {}
    )
    return report


def convention_record(p: SecurityParams) -> Dict[str, Any]:
    return {
        'snu': 'shot+electronic one-time calibration; vacuum = 1 per quadrature',
        'referral': p.referral.value,
        'clearance_definition': p.clearance_definition,
        'holevo_model': HOLEVO_MODEL,
        'finite_size': FINITE_SIZE_MODEL,
        'finite_size_parameters': 'worst case at z standard errors',
        'z': p.z,
        'v_el_trusted': p.v_el_trusted
    }


def convention_variants(p: SecurityParams) -> Dict[str, float]:
    """
    Asymptotic key rate under alternative readings of the parameters: the
    excess noise referred to either end of the channel, electronic noise
    treated as trusted under either clearance definition (in both I_AB and
    chi_BE, skipped at eta = 1), and the asymptotic rate evaluated at
    worst-case parameters.
    """
    variants = {}
    for referral in Referral:
        eps_in = _to_input_referred(p.eps, p.t_channel, referral)
        try:
            variants[f"asym_{referral.name.lower()}_referred"] = _rate_at(p, p.t_channel, eps_in, 0.0)[2]
        except UnphysicalStateError:
            variants[f"asym_{referral.name.lower()}_referred"] = 0.0
    for definition in CLEARANCE_DEFINITIONS if p.eta_trusted < 1.0 else ():
        v_el = electronic_noise_from_clearance(p.clearance_db, definition)
        trusted = replace(p, v_el_trusted=v_el)
        variants[f"asym_trusted_electronic_{definition}"] = _rate_at(trusted, p.t_channel, p.eps_input, 0.0)[2]
    if not math.isinf(p.n_finite):
        bounds = analytic_bounds(p.t_channel, p.eps, p.eta_trusted, p.v_mod, p.n_finite, p.z, p.referral)
        if bounds.aborted:
            variants['asym_worst_case'] = 0.0
        else:
            t_w = min(bounds.T_min, 1.0)
            eps_w = _to_input_referred(max(bounds.eps_max, 0.0), t_w, p.referral)
            variants['asym_worst_case'] = _rate_at(p, t_w, eps_w, 0.0)[2]
    return variants
