"""Spectral multipliers of the linearized Einstein problem at the Fuchsian locus.

A TT eigenmode of L = Delta - 2 R on the base with eigenvalue gamma
produces the profile equation

    -s'' + (z^2 - nu(nu+1)/cosh(t)^2) s = 0,   nu(nu+1) = n(n-2)/4 - gamma,

whose scattering coefficient S(z) at z = n/2 determines the x^n coefficient
of the end.  Every multiplier here takes a :class:`SpectralPoint` (built from
gamma) so that the square-root branch is never ambiguous.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import special as sps

from ..errors import ArgumentError, DomainError
from . import special as sf
from .intervals import PI, Interval, as_interval, icosh, isqrt, itan, itanh

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SpectralPoint:
    """One TT eigenvalue with its branch data.

    ``alpha`` is real above the threshold (n-1)^2/4 and equals -i*lam with
    lam >= 0 below it, so that i*alpha lies on the positive real axis.
    """

    gamma: float
    n: int = 4
    parity: int = 0

    def __post_init__(self):
        if self.parity not in (0, 1):
            raise ArgumentError("parity must be 0 (even) or 1 (odd)", parity=self.parity)
        if self.n < 2:
            raise ArgumentError("dimension must be at least 2", n=self.n)
        if self.gamma < 0:
            raise DomainError("TT eigenvalue below zero leaves the imaginary branch range", gamma=self.gamma)

    @property
    def threshold(self):
        return (self.n - 1) ** 2 / 4.0

    @property
    def branch(self):
        return "real" if self.gamma >= self.threshold else "imaginary"

    @property
    def lam(self):
        """i*alpha on the imaginary branch, 0 on the real branch."""
        if self.branch == "real":
            return 0.0
        return math.sqrt(self.threshold - self.gamma)

    @property
    def alpha(self):
        if self.branch == "real":
            return complex(math.sqrt(self.gamma - self.threshold), 0.0)
        return complex(0.0, -self.lam)

    @property
    def u(self):
        return self.alpha

    @property
    def u_squared(self):
        return self.gamma - self.threshold

    @property
    def nu(self):
        return -0.5 + 1j * self.alpha

    @property
    def potential(self):
        """nu(nu+1)."""
        return self.n * (self.n - 2) / 4.0 - self.gamma

    def with_parity(self, parity):
        return replace(self, parity=parity)

    @classmethod
    def from_u(cls, u, n=4, parity=0, branch="real"):
        threshold = (n - 1) ** 2 / 4.0
        if branch == "real":
            return cls(threshold + float(u) ** 2, n, parity)
        return cls(threshold - float(u) ** 2, n, parity)


@dataclass(frozen=True)
class LaurentData:
    residue: complex
    finite_part: complex
    center: float
    radius: float


def _gamma_product(top, bottom):
    for arg in top:
        if sf._is_pole(arg):
            raise DomainError("scattering coefficient at a pole of its Gamma quotient", argument=complex(arg))
    total = 0j
    for arg in top:
        total += complex(sps.loggamma(complex(arg)))
    for arg in bottom:
        if sf._is_pole(arg):
            return 0j
        total -= complex(sps.loggamma(complex(arg)))
    return cmath.exp(total)


def _s_product(z, nu, parity):
    if parity == 1:
        return _gamma_product(
            (-z, (-nu + z + 1) / 2, (nu + z + 2) / 2),
            (z, (-nu - z + 1) / 2, (nu - z + 2) / 2),
        )
    return _gamma_product(
        (-z, (-nu + z) / 2, (nu + z + 1) / 2),
        (z, (-nu - z) / 2, (nu - z + 1) / 2),
    )


def _s_reflected(z, nu, parity):
    lead = 2.0 ** (-2 * z) * _gamma_product((-z, z - nu), (z, -z - nu))
    if parity == 1:
        den = cmath.sin(math.pi * (nu + z) / 2)
        num = cmath.sin(math.pi * (nu - z) / 2)
    else:
        den = cmath.cos(math.pi * (nu + z) / 2)
        num = cmath.cos(math.pi * (nu - z) / 2)
    if abs(den) < 1e-300:
        raise DomainError("reflected form hits a removable zero; use the product form", z=complex(z))
    return lead * num / den


def scattering_laurent(z0, point: SpectralPoint, form="product", radius=0.25, nodes=64):
    """Residue and finite part of S at z0 by trapezoid quadrature on a circle."""
    nu = point.nu
    fn = _s_product if form == "product" else _s_reflected
    theta = 2 * np.pi * np.arange(nodes) / nodes
    ring = radius * np.exp(1j * theta)
    values = np.array([fn(z0 + w, nu, point.parity) for w in ring])
    return LaurentData(
        residue=complex(np.mean(values * ring)),
        finite_part=complex(np.mean(values)),
        center=float(z0),
        radius=radius,
    )


def scattering_S(z, point: SpectralPoint, form="product"):
    """S^parity(z); at z = n/2 with n even the Laurent data is returned instead."""
    if point.n % 2 == 0 and abs(complex(z) - point.n / 2) < 1e-12:
        return scattering_laurent(point.n / 2, point, form)
    if form == "product":
        return _s_product(complex(z), point.nu, point.parity)
    if form == "reflected":
        return _s_reflected(complex(z), point.nu, point.parity)
    raise ArgumentError("form must be 'product' or 'reflected'", form=form)


# odd n

def _odd_prefactor(n):
    """2^{-n} Gamma(-n/2)/Gamma(n/2), a rational number for odd n."""
    num = (-2.0) ** ((n + 1) // 2) * 2.0 ** ((n - 1) // 2)
    den = 1.0
    for k in range(n, 0, -2):
        den *= k
    for k in range(n - 2, 0, -2):
        den *= k
    return num / den / 2.0**n


def _hyperbolic_factor(point: SpectralPoint, power):
    """u*tanh(pi u/2)^power, continued to the imaginary branch u = -i*lam."""
    if point.branch == "real":
        u = point.alpha.real
        if power > 0:
            return u * math.tanh(math.pi * u / 2)
        if u < 1e-8:
            return 2 / math.pi * (1 + (math.pi * u) ** 2 / 12)
        return u / math.tanh(math.pi * u / 2)
    lam = point.lam
    if power > 0:
        # u tanh(pi u/2) = -lam tan(pi lam/2)
        if abs(math.cos(math.pi * lam / 2)) < 1e-12:
            raise DomainError("tan branch pole", gamma=point.gamma)
        return -lam * math.tan(math.pi * lam / 2)
    if lam < 1e-8:
        return 2 / math.pi * (1 - (math.pi * lam) ** 2 / 12)
    if abs(math.sin(math.pi * lam / 2)) < 1e-12:
        raise DomainError("cot branch pole", gamma=point.gamma)
    return lam / math.tan(math.pi * lam / 2)


def _odd_power(point: SpectralPoint):
    return (-1) ** (((point.n - 1) // 2 - point.parity) % 2)


def multiplier_n_odd(point: SpectralPoint, raw=False):
    """x^n coefficient multiplier for odd n.  ``raw`` drops the Gamma prefactor."""
    n = point.n
    if n % 2 == 0:
        raise ArgumentError("multiplier_n_odd needs odd n", n=n)
    value = _hyperbolic_factor(point, _odd_power(point))
    usq = point.u_squared
    for ell in range(1, (n - 1) // 2 + 1):
        value *= usq + ell * ell
    if raw:
        return value
    return _odd_prefactor(n) * value


# n = 4

def _check_n4(point: SpectralPoint):
    if point.n != 4:
        raise ArgumentError("this multiplier is defined for n = 4", n=point.n)
    if point.gamma <= 2.0:
        raise DomainError("gamma <= 2 violates the spectral assumption L - 2 > 0", gamma=point.gamma)


def multiplier_G_n4(point: SpectralPoint):
    """r_4 / r_0 for the parity of ``point``: FP S(2) - nu^2(nu+1)^2/32."""
    _check_n4(point)
    sign = (-1) ** point.parity
    x = point.gamma - 2.0  # u^2 + 1/4
    if point.branch == "real":
        u = point.alpha.real
        head = sf.C0 - sign * math.pi / math.cosh(math.pi * u) + 2 * float(sps.psi(complex(2.5, -u)).real)
        return -(head * x * (x + 2) + x * x) / 32
    lam = point.lam
    if point.parity == 0:
        branch_term = -math.pi * math.tan(math.pi * (0.5 - lam) / 2)
    else:
        branch_term = math.pi * math.tan(math.pi * (0.5 + lam) / 2)
    head = sf.C0 + branch_term + 2 * float(sps.psi(2.5 - lam))
    return -(head * x * (x + 2) + 2 * lam * (2 * lam * lam - 2.5) + x * x) / 32


def multiplier_G_display(point: SpectralPoint):
    """The single-formula display with Im sinh(pi u) terms, evaluated literally.

    Agrees with :func:`multiplier_G_n4` on the real branch only; kept for
    diagnostics.
    """
    _check_n4(point)
    u = point.alpha
    x = u * u + 0.25
    sign = (-1) ** point.parity
    bracket = (
        sf.C0
        - sign * math.pi * (1 - cmath.sinh(math.pi * u).imag) / cmath.cosh(math.pi * u)
        + 2 * complex(sps.psi(2.5 - 1j * u)).real
    )
    value = bracket * x * (x + 2) - 2 * u.imag * (2 * u * u + 2.5) + x * x
    return -(value.real) / 32


def hessian_multiplier_H(point: SpectralPoint, diagnostics=False):
    """H_eps via the assembly -32 G + (u^2+1/4)(u^2+9/4) + 2."""
    g_value = multiplier_G_n4(point)
    value = -32 * g_value + point.gamma * (point.gamma - 2.0) + 2.0
    if not diagnostics:
        return value
    return {"assembly": value, **_h_displays(point), "G": g_value}


def _h_displays(point: SpectralPoint):
    sign = (-1) ** point.parity
    x = point.gamma - 2.0
    if point.branch == "real":
        u = point.alpha.real
        psi_term = 2 * float(sps.psi(complex(2.5, -u)).real)
        raw = (sf.C0 - sign * math.pi / math.cosh(math.pi * u) + psi_term) * x * (x + 2) + x * x + 2
        shifted = raw + x * (x + 2)
        assembly = -32 * multiplier_G_n4(point) + point.gamma * x + 2
        return {
            "display_raw": raw,
            "display_with_one": shifted,
            "display_gap": assembly - raw,
        }
    lam = point.lam
    tan_term = math.tan(math.pi * (0.5 - lam) / 2) ** sign
    value = (
        (sf.C0 + 1 - sign * math.pi * tan_term + 2 * float(sps.psi(2.5 - lam))) * x * (x + 2)
        + 2 * lam * (2 * lam * lam - 2.5)
        + x * x
        + 2
    )
    assembly = -32 * multiplier_G_n4(point) + point.gamma * x + 2
    return {"display_raw": value, "display_with_one": value, "display_gap": assembly - value}


def h_lower_curve(u):
    """H-tilde: H_0 with Re psi frozen at psi(5/2), a lower bound on the real branch."""
    x = u * u + 0.25
    head = sf.C0 + 1 - math.pi / math.cosh(math.pi * u) + 2 * sf.PSI_FIVE_HALVES
    return head * x * (x + 2) + x * x + 2


def h0_imaginary_factored(v):
    """H_0(-i u) with v = 1/2 - u in factored form v(v-2)[(a+1)(v^2-1) - 4v]."""
    a_value = sf.a_imag(v)
    return v * (v - 2) * (a_value * (v * v - 1) + v * v - 4 * v - 1)


def h0_imaginary_quoted(v):
    """Same with the prefactor v(2-v) as printed; differs by an overall sign."""
    return -h0_imaginary_factored(v)


def obstruction_multiplier(gamma, n=4):
    if n % 2:
        raise ArgumentError("obstruction multiplier needs even n", n=n)
    half = n // 2
    value = (-1) ** (half + 1) * 2.0 ** (1 - n) / (math.factorial(half) * math.factorial(half - 1))
    for j in range(half):
        value *= gamma - j * (n - 1 - j)
    return value


def g_from_scattering(point: SpectralPoint):
    """G_eps from the Laurent finite part of S at z = 2 (third route)."""
    _check_n4(point)
    data = scattering_laurent(2.0, point)
    return data.finite_part.real - point.potential**2 / 32


# enclosures

def _gamma_box(point):
    return Interval.around(point.gamma, 0)


def _branch_root(square):
    """sqrt of an enclosure of u^2 or lam^2, which are nonnegative by construction."""
    return isqrt(Interval(max(square.lo, 0.0), max(square.hi, 0.0)))


def _g_enclosure(point: SpectralPoint):
    _check_n4(point)
    gam = _gamma_box(point)
    x = gam - 2.0
    sign = (-1) ** point.parity
    c0 = sf.c0_enclosure()
    if point.branch == "real":
        u = _branch_root(gam - 2.25)
        head = c0 - sign * PI / icosh(PI * u) + 2 * sf.re_digamma_box(2.5, u)
        return -(head * x * (x + 2.0) + x.sqr()) / 32.0
    lam = _branch_root(2.25 - gam)
    if point.parity == 0:
        branch_term = -PI * itan(PI * (0.5 - lam) / 2.0)
    else:
        branch_term = PI * itan(PI * (0.5 + lam) / 2.0)
    head = c0 + branch_term + 2 * sf.re_digamma_box(2.5 - lam, 0.0)
    return -(head * x * (x + 2.0) + 2.0 * lam * (2.0 * lam.sqr() - 2.5) + x.sqr()) / 32.0


def _h_enclosure(point):
    gam = _gamma_box(point)
    return -32.0 * _g_enclosure(point) + gam * (gam - 2.0) + 2.0


def _odd_enclosure(point: SpectralPoint):
    gam = _gamma_box(point)
    power = _odd_power(point)
    if point.branch == "real":
        u = _branch_root(gam - point.threshold)
        if power > 0:
            factor = u * itanh(PI * u / 2.0)
        elif u.lo <= 1e-8:
            # u coth(pi u/2) = (2/pi)(1 + pi^2 u^2/12 + ...), increasing
            top = 2 / math.pi * (1 + (math.pi * max(u.hi, 1e-8)) ** 2 / 6)
            factor = Interval(2 / math.pi * (1 - 4 * _EPS), _up_guard(top))
        else:
            factor = u / itanh(PI * u / 2.0)
    else:
        lam = _branch_root(point.threshold - gam)
        if power > 0:
            factor = -lam * itan(PI * lam / 2.0)
        elif lam.lo <= 1e-8:
            bottom = 2 / math.pi * (1 - (math.pi * max(lam.hi, 1e-8)) ** 2 / 6)
            factor = Interval(bottom * (1 - 4 * _EPS), _up_guard(2 / math.pi))
        else:
            factor = lam / itan(PI * lam / 2.0)
    usq = gam - point.threshold
    for ell in range(1, (point.n - 1) // 2 + 1):
        factor = factor * (usq + float(ell * ell))
    return _odd_prefactor(point.n) * factor


def _up_guard(value):
    return value * (1 + 8 * _EPS)


def _obs_enclosure(point: SpectralPoint):
    n = point.n
    gam = _gamma_box(point)
    half = n // 2
    value = as_interval((-1) ** (half + 1) * 2.0 ** (1 - n) / (math.factorial(half) * math.factorial(half - 1)))
    for j in range(half):
        value = value * (gam - float(j * (n - 1 - j)))
    return value


def _heuristic_enclosure(value, spread=0.0):
    value = complex(value).real
    radius = 64 * _EPS * abs(value) + spread
    return Interval(value - radius, value + radius)


@dataclass(frozen=True)
class SpectralMultiplier:
    """A named multiplier with value, enclosure and ODE oracle."""

    name: str
    evaluator: Callable
    encloser: Optional[Callable] = None
    oracle_fn: Optional[Callable] = None
    rigorous: bool = True

    def eval(self, point: SpectralPoint):
        return self.evaluator(point)

    def enclosure(self, point: SpectralPoint) -> Interval:
        if self.encloser is None:
            raise ArgumentError(f"no enclosure for {self.name}")
        return self.encloser(point)

    def oracle(self, point: SpectralPoint):
        if self.oracle_fn is None:
            raise ArgumentError(f"no ODE oracle for {self.name}")
        return self.oracle_fn(point)

    def operator(self, points):
        """Diagonal action in eigencoordinates."""
        return np.diag([float(np.real(self.eval(p))) for p in points])


def _s_multiplier(parity, z):
    def evaluate(point):
        return scattering_S(z, point.with_parity(parity))

    def enclose(point):
        pt = point.with_parity(parity)
        prod = scattering_S(z, pt, "product")
        refl = scattering_S(z, pt, "reflected")
        return _heuristic_enclosure(prod, abs(prod - refl))

    def oracle(point):
        from .oracle import ode_oracle

        return ode_oracle(point.with_parity(parity), z=z).c_next

    return SpectralMultiplier(f"S{parity}(z={z})", evaluate, enclose, oracle, rigorous=False)


def get_multiplier(name, z=None) -> SpectralMultiplier:
    from .oracle import ode_oracle

    if name in ("S1", "S0"):
        if z is None:
            raise ArgumentError("scattering multipliers need z")
        return _s_multiplier(int(name[1]), z)
    if name == "F":
        return SpectralMultiplier("F", multiplier_n_odd, _odd_enclosure, lambda p: ode_oracle(p).c_next)
    if name == "G":
        return SpectralMultiplier("G", multiplier_G_n4, _g_enclosure, lambda p: ode_oracle(p).c_next)
    if name == "H":

        def h_oracle(point):
            fit = ode_oracle(point)
            return -32 * fit.c_next - 16 * fit.c_log + 2

        return SpectralMultiplier("H", hessian_multiplier_H, _h_enclosure, h_oracle)
    if name == "ObsMult":
        return SpectralMultiplier(
            "ObsMult",
            lambda p: obstruction_multiplier(p.gamma, p.n),
            _obs_enclosure,
            lambda p: ode_oracle(p).c_log,
        )
    raise ArgumentError("unknown multiplier", name=name)
