"""Blockwise linearized Einstein operator on g = dt^2 + f(t)^2 h0.

A separated mode is one eigenfunction on the base times a t-profile:

* ``u``  : q = u(t) phi dt^2, phi a Laplace eigenfunction (eigenvalue lam)
* ``xi`` : q = zeta(t) (f psi) (x) dt, psi a Hodge eigenform (eigenvalue alpha)
* ``r``  : q = rho(t) (f^2 phi), phi a TT eigentensor of L_{h0} (eigenvalue gamma)

The frames f psi and f^2 phi are parallel along d/dt, so covariant
t-derivatives act on the profile alone.  The off-diagonal couplings (d u,
delta* xi, trace terms) vanish once u = 0 and xi = 0, which is the situation
on the trace-free divergence-free kernel; they are not represented here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.fft import dct
from scipy.linalg import eigh_tridiagonal

from ..errors import ArgumentError

BLOCKS = ("u", "xi", "r")


def chebyshev_nodes(t0, t1, count):
    k = np.arange(count)
    return 0.5 * (t0 + t1) - 0.5 * (t1 - t0) * np.cos(np.pi * k / (count - 1))


def lobatto_interpolant(t, values):
    """Chebyshev interpolant through samples on :func:`chebyshev_nodes` via a DCT-I."""
    count = len(t)
    if not np.allclose(t, chebyshev_nodes(t[0], t[-1], count), rtol=0, atol=1e-12 * (1 + abs(t[-1]))):
        raise ArgumentError("profiles must be sampled on Chebyshev-Lobatto nodes")
    coef = dct(np.asarray(values, dtype=float)[::-1], type=1) / (count - 1)
    coef[0] /= 2
    coef[-1] /= 2
    return Chebyshev(coef, domain=[t[0], t[-1]])


@dataclass(frozen=True)
class CylinderMode:
    block: str
    eigenvalue: float
    t: np.ndarray
    values: np.ndarray
    n: int = 4

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ArgumentError("block must be one of u, xi, r", block=self.block)

    def interpolant(self):
        return lobatto_interpolant(self.t, self.values)


@dataclass(frozen=True)
class Warp:
    """f and its first two derivatives; cosh by default."""

    f: callable = np.cosh
    df: callable = np.sinh
    ddf: callable = np.cosh


COSH = Warp()


def _coefficients(block, n, eigenvalue, t, warp):
    f, df, ddf = warp.f(t), warp.df(t), warp.ddf(t)
    log_d = df / f
    if block == "u":
        first = (n + 4) * log_d
        zeroth = eigenvalue / f**2 - 2 * ((n + 1) * log_d**2 + ddf / f)
    elif block == "xi":
        first = (n + 2) * log_d
        zeroth = eigenvalue / f**2 - ((n - 1) * log_d**2 + 2 * ddf / f)
    else:
        first = n * log_d
        zeroth = eigenvalue / f**2
    return first, zeroth


def cylinder_linop_apply(mode: CylinderMode, warp: Warp = COSH) -> CylinderMode:
    """-p'' - first * p' + zeroth * p for the block of ``mode``."""
    poly = mode.interpolant()
    d1 = poly.deriv(1)(mode.t)
    d2 = poly.deriv(2)(mode.t)
    first, zeroth = _coefficients(mode.block, mode.n, mode.eigenvalue, mode.t, warp)
    return replace(mode, values=-d2 - first * d1 + zeroth * mode.values)


def block_weight(block, n, t, warp: Warp = COSH):
    """Density making the block formally self-adjoint: f^{n+4}, f^{n+2}, f^n."""
    power = {"u": n + 4, "xi": n + 2, "r": n}[block]
    return warp.f(t) ** power


def weighted_pairing(a: CylinderMode, b: CylinderMode, warp: Warp = COSH):
    integrand = a.values * b.values * block_weight(a.block, a.n, a.t, warp)
    anti = lobatto_interpolant(a.t, integrand).integ()
    return float(anti(a.t[-1]) - anti(a.t[0]))


def reduced_potential(block, n, eigenvalue, t):
    """Potential of the Schrodinger form after removing the weight.

    u = f^{-n/2-2} v and xi = f^{-n/2-1} zeta give -w'' + V w; for r the
    substitution rho = f^{-n/2} s gives the profile equation with z = n/2.
    """
    th2 = np.tanh(t) ** 2
    sech2 = 1 / np.cosh(t) ** 2
    if block == "u":
        return n * (n - 2) / 4 * th2 + eigenvalue * sech2 + n / 2
    if block == "xi":
        return (n * n / 4 - n / 2 + 1) * th2 + eigenvalue * sech2 + n / 2 - 1
    nu_term = n * (n - 2) / 4 - eigenvalue
    return n * n / 4 - nu_term * sech2


def substitution_power(block, n):
    return {"u": -n / 2 - 2, "xi": -n / 2 - 1, "r": -n / 2}[block]


def indicial_roots(block, n):
    """Exponents of e^{alpha t} at t -> +inf for the reduced equation."""
    limit = float(reduced_potential(block, n, 0.0, np.array([60.0]))[0])
    root = np.sqrt(limit)
    return (-root, root)


def dirichlet_ground_energy(block, n, eigenvalue, half_width=12.0, points=2000):
    """Smallest Dirichlet eigenvalue of -d^2 + V on [-T, T]; positive means no decaying solution."""
    t = np.linspace(-half_width, half_width, points + 2)[1:-1]
    step = t[1] - t[0]
    diag = 2 / step**2 + reduced_potential(block, n, eigenvalue, t)
    off = -np.ones(points - 1) / step**2
    return float(eigh_tridiagonal(diag, off, select="i", select_range=(0, 0), eigvals_only=True)[0])
