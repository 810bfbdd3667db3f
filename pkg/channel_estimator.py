#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Channel Estimator - transmittance and excess noise from paired symbols

Model per quadrature, in shot-noise units: y = t*x + z, with
t = sqrt(eta*T/2) and Var(z) = 1 + t^2 * eps (input-referred).
Both quadratures are pooled, so n counts real samples (two per symbol).
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum

import numpy as np

from qkd_errors import EstimationFailure, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_MIN_SYMBOLS = 10_000
DEGENERATE_NOISE = 1e-6


class Referral(Enum):
    INPUT = 'input-referred'
    OUTPUT = 'output-referred'

    @classmethod
    def parse(cls, value) -> 'Referral':
        if isinstance(value, cls):
            return value
        aliases = {'input': cls.INPUT, 'output': cls.OUTPUT,
                   cls.INPUT.value: cls.INPUT, cls.OUTPUT.value: cls.OUTPUT}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValidationError(f"Unknown excess-noise referral '{value}'") from None


@dataclass
class SufficientStats:
    """Additive moments of paired (x, y) reals; merge frames by adding"""
    sxx: float = 0.0
    sxy: float = 0.0
    syy: float = 0.0
    n: int = 0

    @classmethod
    def from_symbols(cls, alice: np.ndarray, bob: np.ndarray) -> 'SufficientStats':
        if alice.shape != bob.shape:
            raise ValidationError(f"Symbol arrays differ in shape: {alice.shape} vs {bob.shape}")
        x = np.concatenate([alice.real, alice.imag]) if np.iscomplexobj(alice) else np.asarray(alice, float)
        y = np.concatenate([bob.real, bob.imag]) if np.iscomplexobj(bob) else np.asarray(bob, float)
        return cls(float(x @ x), float(x @ y), float(y @ y), int(x.size))

    def __add__(self, other: 'SufficientStats') -> 'SufficientStats':
        return SufficientStats(self.sxx + other.sxx, self.sxy + other.sxy,
                               self.syy + other.syy, self.n + other.n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChannelEstimate:
    t_hat: float
    sigma2_hat: float
    eps_hat: float
    sigma_t: float
    sigma_sigma2: float
    sigma_eps: float
    n_used: int
    eta: float
    v_mod: float
    referral: Referral = Referral.INPUT
    t_min: float = math.nan
    eps_max: float = math.nan
    z: float = 0.0
    degenerate: bool = False
    aborted: bool = False

    @property
    def T_hat(self) -> float:
        return 2.0 * self.t_hat ** 2 / self.eta

    @property
    def T_min(self) -> float:
        return 2.0 * max(self.t_min, 0.0) ** 2 / self.eta

    @property
    def sigma_T(self) -> float:
        return 4.0 * self.t_hat * self.sigma_t / self.eta

    def to_dict(self) -> dict:
        data = asdict(self)
        data['referral'] = self.referral.value
        data['T_hat'] = self.T_hat
        data['T_min'] = self.T_min
        data['sigma_T'] = self.sigma_T
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ChannelEstimate':
        fields = {k: v for k, v in data.items() if k not in ('T_hat', 'T_min', 'sigma_T')}
        fields['referral'] = Referral.parse(fields['referral'])
        return cls(**fields)


def _excess_from_sigma2(sigma2: float, t: float, eta: float, referral: Referral) -> float:
    if referral is Referral.INPUT:
        return (sigma2 - 1.0) / t ** 2
    return 2.0 * (sigma2 - 1.0) / eta


def _sigma_eps(sigma2: float, sigma_sigma2: float, t: float, sigma_t: float,
               eta: float, referral: Referral) -> float:
    if referral is Referral.OUTPUT:
        return 2.0 * sigma_sigma2 / eta
    d_sigma2 = sigma_sigma2 / t ** 2
    d_t = 2.0 * (sigma2 - 1.0) / t ** 3 * sigma_t
    return math.hypot(d_sigma2, d_t)


def estimate_from_stats(stats: SufficientStats, eta: float, v_mod: float,
                        referral: Referral = Referral.INPUT,
                        min_symbols: int = DEFAULT_MIN_SYMBOLS) -> ChannelEstimate:
    """Point estimates and their standard errors from pooled moments"""
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"Detection efficiency must lie in (0, 1], got {eta}")
    if not v_mod > 0:
        raise ValidationError(f"Modulation variance must be positive, got {v_mod}")
    if stats.n < 2 * min_symbols:
        raise ValidationError(f"Need at least {min_symbols} symbols, got {stats.n // 2}")

    if stats.sxx / stats.n < 0.5 * v_mod:
        raise EstimationFailure(
            f"Alice variance {stats.sxx / stats.n:.4g} is below v_mod/2; frames look misaligned")
    t = stats.sxy / stats.sxx
    if t <= 0.0:
        raise EstimationFailure(f"Non-positive channel gain {t:.4g}; frames look misaligned")

    residual = max(stats.syy - stats.sxy ** 2 / stats.sxx, 0.0)
    sigma2 = residual / stats.n
    n = stats.n
    sigma_t = math.sqrt(sigma2 / (n * v_mod))
    sigma_sigma2 = sigma2 * math.sqrt(2.0 / n)
    eps = _excess_from_sigma2(sigma2, t, eta, referral)
    degenerate = sigma2 < DEGENERATE_NOISE
    if degenerate:
        logger.warning("Residual variance %.3g is below shot noise; estimate is degenerate", sigma2)

    return ChannelEstimate(
        t_hat=t, sigma2_hat=sigma2, eps_hat=eps, sigma_t=sigma_t, sigma_sigma2=sigma_sigma2,
        sigma_eps=_sigma_eps(sigma2, sigma_sigma2, t, sigma_t, eta, referral),
        n_used=n, eta=eta, v_mod=v_mod, referral=referral, t_min=t, eps_max=eps,
        degenerate=degenerate
    )


def estimate_channel(alice: np.ndarray, bob: np.ndarray, eta: float, v_mod: float,
                     referral: Referral = Referral.INPUT,
                     min_symbols: int = DEFAULT_MIN_SYMBOLS) -> ChannelEstimate:
    """
    Estimate (t, sigma^2, eps) from Alice's data symbols and Bob's SNU-normalized ones.

    Accepts symbol arrays or SymbolFrames.
    """
    alice = np.asarray(getattr(alice, 'symbols', alice))
    bob = np.asarray(getattr(bob, 'symbols', bob))
    if alice.shape != bob.shape:
        raise ValidationError(f"Alice and Bob frames differ in length: {alice.size} vs {bob.size}")
    if alice.size < min_symbols:
        raise ValidationError(f"Need at least {min_symbols} symbols, got {alice.size}")
    return estimate_from_stats(SufficientStats.from_symbols(alice, bob), eta, v_mod, referral, min_symbols)


def worst_case_bounds(est: ChannelEstimate, z: float = 6.5) -> ChannelEstimate:
    """
    Pessimistic parameters z standard errors from the point estimate.

    t_min = t - z*sigma_t, sigma2_max = sigma2 + z*sigma_sigma2, and eps_max is
    the excess noise implied by the pair. t_min <= 0 sets `aborted`.
    """
    if z < 0:
        raise ValidationError(f"Confidence multiplier must be >= 0, got {z}")
    t_min = est.t_hat - z * est.sigma_t
    sigma2_max = est.sigma2_hat + z * est.sigma_sigma2
    if t_min <= 0.0:
        logger.warning("Worst-case gain %.4g <= 0; channel aborted", t_min)
        return replace(est, t_min=t_min, eps_max=math.inf, z=z, aborted=True)
    eps_max = _excess_from_sigma2(sigma2_max, t_min, est.eta, est.referral)
    # clamped to the physical range
    return replace(est, t_min=t_min, eps_max=max(eps_max, est.eps_hat, 0.0), z=z, aborted=False)


def analytic_bounds(transmittance: float, eps: float, eta: float, v_mod: float, n_symbols: float,
                    z: float = 6.5, referral: Referral = Referral.INPUT) -> ChannelEstimate:
    """Worst-case bounds for the expected moments of an n_symbols run at (T, eps)"""
    if not 0.0 < transmittance <= 1.0:
        raise ValidationError(f"Transmittance must lie in (0, 1], got {transmittance}")
    if eps < 0:
        raise ValidationError(f"Excess noise must be >= 0, got {eps}")
    if not n_symbols > 0:
        raise ValidationError(f"Block length must be positive, got {n_symbols}")
    t = math.sqrt(eta * transmittance / 2.0)
    if referral is Referral.INPUT:
        sigma2 = 1.0 + t ** 2 * eps
    else:
        sigma2 = 1.0 + eta * eps / 2.0
    n = 2.0 * n_symbols
    sigma_t = math.sqrt(sigma2 / (n * v_mod))
    sigma_sigma2 = sigma2 * math.sqrt(2.0 / n)
    point = ChannelEstimate(
        t_hat=t, sigma2_hat=sigma2, eps_hat=eps, sigma_t=sigma_t, sigma_sigma2=sigma_sigma2,
        sigma_eps=_sigma_eps(sigma2, sigma_sigma2, t, sigma_t, eta, referral),
        n_used=int(min(n, 2 ** 62)), eta=eta, v_mod=v_mod, referral=referral, t_min=t, eps_max=eps
    )
    return worst_case_bounds(point, z)


def decompose_excess_noise(eps_total: float, t_total: float, eps_a: float) -> float:
    """
    Split a total excess noise into a known component and the remainder.

    eps_total = eps_a + eps_b / t_total, so eps_b = (eps_total - eps_a) * t_total.
    """
    if not 0.0 < t_total <= 1.0:
        raise ValidationError(f"Transmittance must lie in (0, 1], got {t_total}")
    if eps_total < 0 or eps_a < 0:
        raise ValidationError("Excess noise terms must be >= 0")
    if eps_a > eps_total:
        raise ValidationError(f"Component noise {eps_a} exceeds the total {eps_total}")
    return (eps_total - eps_a) * t_total


def compose_excess_noise(eps_a: float, eps_b: float, t_total: float) -> float:
    if not 0.0 < t_total <= 1.0:
        raise ValidationError(f"Transmittance must lie in (0, 1], got {t_total}")
    if eps_a < 0 or eps_b < 0:
        raise ValidationError("Excess noise terms must be >= 0")
    return eps_a + eps_b / t_total
