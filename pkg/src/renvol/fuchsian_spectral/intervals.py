"""Outward-rounded interval arithmetic on binary64.

Basic operations (+, -, *, /, sqrt) are correctly rounded in IEEE 754, so
stepping one ulp outward from the computed endpoints gives a rigorous
enclosure.  Library transcendentals (exp, log, cosh, tan, tanh) are not
correctly rounded; we assume an error below ``LIBM_ULPS`` ulps, which is
generous for glibc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

LIBM_ULPS = 4

if hasattr(math, "nextafter"):
    ROUNDING = "rigorous"

    def _down(value, steps=1):
        for _ in range(steps):
            value = math.nextafter(value, -math.inf)
        return value

    def _up(value, steps=1):
        for _ in range(steps):
            value = math.nextafter(value, math.inf)
        return value

else:  # pragma: no cover - python < 3.9
    ROUNDING = "heuristic"
    _EPS = np.finfo(float).eps

    def _down(value, steps=1):
        return value - abs(value) * 4 * steps * _EPS - 1e-300

    def _up(value, steps=1):
        return value + abs(value) * 4 * steps * _EPS + 1e-300


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise DomainError("empty interval", lo=self.lo, hi=self.hi)

    @classmethod
    def point(cls, value):
        value = float(value)
        return cls(value, value)

    @classmethod
    def around(cls, value, ulps=1):
        value = float(value)
        return cls(_down(value, ulps), _up(value, ulps))

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, value):
        return self.lo <= value <= self.hi

    def positive(self):
        return self.lo > 0.0

    def negative(self):
        return self.hi < 0.0

    def __repr__(self):
        return f"[{self.lo!r}, {self.hi!r}]"

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, other):
        other = as_interval(other)
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_interval(other)
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __rsub__(self, other):
        return as_interval(other) - self

    def __mul__(self, other):
        other = as_interval(other)
        products = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi]
        return Interval(_down(min(products)), _up(max(products)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_interval(other)
        if other.lo <= 0.0 <= other.hi:
            raise DomainError("interval division by an interval containing zero", divisor=repr(other))
        quotients = [self.lo / other.lo, self.lo / other.hi, self.hi / other.lo, self.hi / other.hi]
        return Interval(_down(min(quotients)), _up(max(quotients)))

    def __rtruediv__(self, other):
        return as_interval(other) / self

    def sqr(self):
        if self.lo >= 0:
            return Interval(_down(self.lo * self.lo), _up(self.hi * self.hi))
        if self.hi <= 0:
            return Interval(_down(self.hi * self.hi), _up(self.lo * self.lo))
        return Interval(0.0, _up(max(self.lo * self.lo, self.hi * self.hi)))

    def hull(self, other):
        other = as_interval(other)
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))


def as_interval(value):
    if isinstance(value, Interval):
        return value
    return Interval.point(value)


def _monotone(fn, box, increasing=True):
    box = as_interval(box)
    lo, hi = fn(box.lo), fn(box.hi)
    if not increasing:
        lo, hi = hi, lo
    return Interval(_down(lo, LIBM_ULPS), _up(hi, LIBM_ULPS))


def isqrt(box):
    box = as_interval(box)
    if box.lo < 0:
        raise DomainError("sqrt of negative interval", box=repr(box))
    return Interval(_down(math.sqrt(box.lo)), _up(math.sqrt(box.hi)))


def iexp(box):
    return _monotone(math.exp, box)


def ilog(box):
    box = as_interval(box)
    if box.lo <= 0:
        raise DomainError("log of non-positive interval", box=repr(box))
    return _monotone(math.log, box)


def icosh(box):
    box = as_interval(box)
    if box.lo >= 0:
        return _monotone(math.cosh, box)
    if box.hi <= 0:
        return _monotone(math.cosh, box, increasing=False)
    return Interval(1.0, _up(math.cosh(max(-box.lo, box.hi)), LIBM_ULPS))


def itanh(box):
    return _monotone(math.tanh, box)


def itan(box):
    box = as_interval(box)
    half = math.pi / 2
    if not (-half < box.lo and box.hi < half):
        raise DomainError("tan enclosure needs the argument inside (-pi/2, pi/2)", box=repr(box))
    return _monotone(math.tan, box)


PI = Interval(_down(math.pi), _up(math.pi))
EULER = Interval.around(float(np.euler_gamma))
LN2 = Interval(_down(math.log(2.0), LIBM_ULPS), _up(math.log(2.0), LIBM_ULPS))


def _head_sum(terms_a, terms_b):
    """Enclosure of sum(a_k - b_k) given float arrays with small relative error."""
    diff = terms_a - terms_b
    total = math.fsum(diff)
    eps = np.finfo(float).eps
    # per-term: a_k has 1/2 ulp, b_k at most 5 roundings, difference 1/2 ulp
    slack = eps * (math.fsum(np.abs(terms_a)) + 6 * math.fsum(np.abs(terms_b)) + math.fsum(np.abs(diff)))
    slack += eps * abs(total)
    return Interval(_down(total - slack), _up(total + slack))


def re_digamma_enclosure(sigma, t=0.0, terms=4096):
    """Certified enclosure of Re psi(sigma + i t) for sigma >= 1.

    Uses Re psi = -gamma + sum_k f(k) with f(k) = 1/(k+1) - (k+sigma)/((k+sigma)^2+t^2).
    For sigma >= 1, f is convex on [0, inf), so the tail from ``terms`` on lies
    between the trapezoid-corrected and midpoint integrals, both closed form.
    """
    sigma = float(sigma)
    t = float(t)
    if sigma < 1.0:
        raise DomainError("series enclosure requires sigma >= 1", sigma=sigma)
    k = np.arange(terms, dtype=float)
    shifted = k + sigma
    head = _head_sum(1.0 / (k + 1.0), shifted / (shifted * shifted + t * t))

    def tail_integral(start):
        # int_start^inf f = 1/2 log((start+sigma)^2 + t^2) - log(start+1)
        sq = (Interval.point(sigma) + start).sqr() + Interval.point(t).sqr()
        return 0.5 * ilog(sq) - ilog(Interval.point(start) + 1.0)

    big = float(terms)
    shift = Interval.point(sigma) + big
    first = 1.0 / (Interval.point(big) + 1.0) - shift / (shift.sqr() + Interval.point(t).sqr())
    lower = tail_integral(big) + 0.5 * first
    upper = tail_integral(big - 0.5)
    tail = Interval(lower.lo, upper.hi)
    return head + tail - EULER


def trigamma_enclosure(x, terms=4096):
    """Certified enclosure of psi'(x) = sum 1/(x+k)^2 for x > 0."""
    x = float(x)
    if x <= 0:
        raise DomainError("trigamma enclosure requires x > 0", x=x)
    k = np.arange(terms, dtype=float)
    vals = 1.0 / (x + k) ** 2
    total = math.fsum(vals)
    slack = 4 * np.finfo(float).eps * total
    head = Interval(_down(total - slack), _up(total + slack))
    start = Interval.point(x) + float(terms)
    lower = 1.0 / start + 0.5 / start.sqr()
    upper = 1.0 / (start - 0.5)
    return head + Interval(lower.lo, upper.hi)
