"""Gamma/digamma evaluation in floats and certified enclosures of the constants."""

from __future__ import annotations

import cmath
import math

import numpy as np
from scipy import special as sps

from ..errors import DomainError
from .intervals import (
    EULER,
    LN2,
    PI,
    Interval,
    as_interval,
    icosh,
    itan,
    re_digamma_enclosure,
)

EULER_GAMMA = float(np.euler_gamma)
C0 = -2.5 + 2 * EULER_GAMMA - 2 * math.log(2.0)
PSI_FIVE_HALVES = -EULER_GAMMA - 2 * math.log(2.0) + 8.0 / 3.0
A_AT_ZERO = 23.0 / 6.0 - 6 * math.log(2.0) - math.pi

# B_2k for the asymptotic digamma series
_BERNOULLI = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510)


def _is_pole(value, tol=1e-12):
    value = complex(value)
    if abs(value.imag) > tol or value.real > tol:
        return False
    return abs(value.real - round(value.real)) < tol


def log_gamma(value):
    if _is_pole(value):
        raise DomainError("log_gamma at a pole of Gamma", argument=complex(value))
    if isinstance(value, complex) or np.iscomplexobj(value) or value < 0:
        return complex(sps.loggamma(complex(value)))
    return float(sps.gammaln(value))


def digamma(value):
    if _is_pole(value):
        raise DomainError("digamma at a pole of Gamma", argument=complex(value))
    if isinstance(value, complex):
        return complex(sps.psi(value))
    return float(sps.psi(value))


def gamma_ratio(top, bottom):
    """Gamma(top)/Gamma(bottom); zero when bottom sits on a pole."""
    if _is_pole(top):
        raise DomainError("gamma_ratio numerator at a pole", argument=complex(top))
    if _is_pole(bottom):
        return 0.0
    ratio = cmath.exp(complex(sps.loggamma(complex(top))) - complex(sps.loggamma(complex(bottom))))
    if isinstance(top, complex) or isinstance(bottom, complex):
        return ratio
    return ratio.real


def re_digamma_series(sigma, t=0.0):
    """Re psi(sigma + i t) by upward recurrence and the Bernoulli asymptotic series."""
    arg = complex(sigma, t)
    if _is_pole(arg):
        raise DomainError("digamma at a pole of Gamma", argument=arg)
    shift = max(0, math.ceil(20.0 - sigma))
    acc = 0.0
    for k in range(shift):
        acc -= (1.0 / (arg + k)).real
    big = arg + shift
    inv2 = 1.0 / (big * big)
    series = cmath.log(big) - 0.5 / big
    power = inv2
    for k, b2k in enumerate(_BERNOULLI, start=1):
        series -= b2k / (2 * k) * power
        power *= inv2
    return acc + series.real


def special_functions(value, shift=0.5):
    value = complex(value) if isinstance(value, complex) else float(value)
    out = {
        "log_gamma": log_gamma(value),
        "digamma": digamma(value),
        "gamma_ratio": gamma_ratio(value + shift, value),
    }
    re_part = value.real if isinstance(value, complex) else value
    im_part = value.imag if isinstance(value, complex) else 0.0
    out["re_digamma_series"] = re_digamma_series(re_part, im_part)
    return out


# a(u) on the real branch and a(v) on the imaginary branch, n = 4

def a_real(u):
    return C0 + 1.0 - math.pi / math.cosh(math.pi * u) + 2.0 * float(sps.psi(complex(2.5, -u)).real)


def a_imag(v):
    return C0 + 1.0 - math.pi * math.tan(math.pi * v / 2) + 2.0 * float(sps.psi(v + 2.0))


# enclosures

def re_digamma_box(sigma, t):
    """Enclosure of Re psi(sigma + i t) over boxes; increasing in sigma and in |t|."""
    sigma = as_interval(sigma)
    t = as_interval(t)
    if t.lo <= 0.0 <= t.hi:
        tmin, tmax = 0.0, max(-t.lo, t.hi)
    else:
        tmin, tmax = sorted((abs(t.lo), abs(t.hi)))
    low = re_digamma_enclosure(sigma.lo, tmin)
    high = re_digamma_enclosure(sigma.hi, tmax)
    return Interval(low.lo, high.hi)


def c0_enclosure():
    return -2.5 + 2 * EULER - 2 * LN2


def psi_five_halves_enclosure():
    closed = -EULER - 2 * LN2 + 8.0 / 3.0
    series = re_digamma_enclosure(2.5, 0.0)
    return Interval(max(closed.lo, series.lo), min(closed.hi, series.hi))


def a_zero_enclosure():
    closed = 23.0 / 6.0 - 6 * LN2 - PI
    series = c0_enclosure() + 1.0 - PI + 2 * re_digamma_enclosure(2.5, 0.0)
    return Interval(max(closed.lo, series.lo), min(closed.hi, series.hi))


def a_real_enclosure(u):
    u = as_interval(u)
    return c0_enclosure() + 1.0 - PI / icosh(PI * u) + 2 * re_digamma_box(2.5, u)


def a_imag_enclosure(v):
    v = as_interval(v)
    return c0_enclosure() + 1.0 - PI * itan(PI * v / 2.0) + 2 * re_digamma_box(v + 2.0, 0.0)
