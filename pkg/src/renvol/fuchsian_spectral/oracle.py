"""Shooting oracle for the profile equation.

The even or odd solution is integrated from t = 0 with DOP853, then projected
onto the two Frobenius solutions at x = 2 e^{-t}.  In the variable x the
equation reads

    -(x d/dx)^2 s + (z^2 - nu(nu+1) x^2/(1 + x^2/4)^2) s = 0,

regular singular at x = 0 with exponents -z and z.  When 2z is an even
integer the minus solution carries a log x multiple of the plus solution; its
x^{2z} coefficient is pinned to zero, so the fitted plus-coefficient is the
finite part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ..errors import ArgumentError, ConditioningError, ConvergenceError
from .spectral import SpectralPoint

DEFAULT_WINDOW = (2 * np.exp(-3.0), 2 * np.exp(-1.0))
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class OracleFit:
    leading_norm: float
    a2: float
    c_log: float
    c_next: float
    residual: float
    condition: float
    log_coefficient_recursion: float
    window: tuple
    horizon: float


def _potential_series(order):
    """Coefficients of x^2 (1 + x^2/4)^{-2}."""
    coeff = np.zeros(order + 1)
    for m in range(order // 2 + 1):
        if 2 * m + 2 <= order:
            coeff[2 * m + 2] = (m + 1) * (-0.25) ** m
    return coeff


def frobenius_series(z, potential, order=120):
    """Coefficient arrays for the plus solution, the minus solution and its log multiplier.

    Returns (plus, minus_base, minus_log_part, log_coefficient).  The minus
    solution is x^{-z} (minus_base + C * minus_log_part) + C log(x) * plus,
    written so that both pieces are linear in C; ``log_coefficient`` is the C
    forced by the recursion.
    """
    w = _potential_series(order)
    plus = np.zeros(order + 1)
    plus[0] = 1.0
    for k in range(1, order + 1):
        conv = np.dot(w[2 : k + 1], plus[k - 2 :: -1][: max(k - 1, 0)]) if k >= 2 else 0.0
        plus[k] = potential * conv / (z * z - (z + k) ** 2)

    resonance = 2 * z
    resonant = abs(resonance - round(resonance)) < 1e-12 and round(resonance) % 2 == 0 and round(resonance) > 0
    res_index = int(round(resonance)) if resonant else None
    base = np.zeros(order + 1)
    logp = np.zeros(order + 1)
    base[0] = 1.0
    log_coefficient = 0.0
    for k in range(1, order + 1):
        conv_b = np.dot(w[2 : k + 1], base[k - 2 :: -1][: max(k - 1, 0)]) if k >= 2 else 0.0
        conv_l = np.dot(w[2 : k + 1], logp[k - 2 :: -1][: max(k - 1, 0)]) if k >= 2 else 0.0
        den = k * (2 * z - k)
        if res_index is not None and k == res_index:
            log_coefficient = -potential * conv_b / (2 * z)
            continue
        if abs(den) < 1e-12:
            # odd resonance index: the even potential never reaches it
            continue
        forcing = 0.0
        if res_index is not None and k > res_index:
            # minus-solution log term: L[C log x * plus] = -2C (x d/dx) plus
            forcing = 2.0 * plus[k - res_index] * (k - z)
        base[k] = potential * conv_b / den
        logp[k] = (potential * conv_l + forcing) / den
    return plus, base, logp, log_coefficient


def _shoot(point: SpectralPoint, z, horizon, rtol):
    potential = point.potential

    def rhs(t, y):
        return [y[1], (z * z - potential / np.cosh(t) ** 2) * y[0]]

    y0 = [1.0, 0.0] if point.parity == 0 else [0.0, 1.0]
    sol = solve_ivp(rhs, (0.0, horizon), y0, method="DOP853", rtol=rtol, atol=1e-15, dense_output=True)
    if not sol.success:
        raise ConvergenceError("profile integration failed", reason=sol.message)
    return sol


def ode_oracle(point: SpectralPoint, z=None, horizon=None, window=DEFAULT_WINDOW, samples=64, order=120, rtol=1e-13):
    """Fit the shot solution to the Frobenius basis over an x-window.

    ``window`` is given in x = 2 e^{-t}; ``horizon`` defaults to the t of the
    window's inner end.  Ill-conditioned designs raise ConditioningError.
    """
    z = point.n / 2 if z is None else float(z)
    if z <= 0:
        raise ArgumentError("z must be positive", z=z)
    x_lo, x_hi = sorted(float(v) for v in window)
    if not (0 < x_lo < x_hi < 2):
        raise ArgumentError("fit window must sit inside 0 < x < 2", window=window)
    t_far = float(np.log(2 / x_lo))
    horizon = t_far if horizon is None else float(horizon)
    if horizon < t_far:
        raise ArgumentError("horizon ends before the fit window", horizon=horizon, window=window)

    plus, base, logp, log_coef = frobenius_series(z, point.potential, order)
    ts = np.linspace(np.log(2 / x_hi), t_far, samples)
    xs = 2 * np.exp(-ts)
    powers = np.arange(order + 1)
    xk = xs[:, None] ** powers[None, :]
    phi_plus = xs**z * (xk @ plus)
    col_base = xs ** (-z) * (xk @ base)
    col_log = xs ** (-z) * (xk @ logp) + np.log(xs) * phi_plus
    columns = [col_base, col_log, phi_plus] if log_coef != 0.0 or np.any(logp) else [col_base, phi_plus]
    design = np.column_stack(columns)
    condition = float(np.linalg.cond(design))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise ConditioningError("ill-conditioned Frobenius fit", condition=condition, window=(x_lo, x_hi))

    sol = _shoot(point, z, horizon, rtol)
    data = sol.sol(ts)[0]
    coef, *_ = np.linalg.lstsq(design, data, rcond=None)
    residual = float(np.max(np.abs(design @ coef - data)) / np.max(np.abs(data)))
    lead = coef[0]
    if len(columns) == 3:
        c_log = coef[1] / lead
        c_next = coef[2] / lead
    else:
        c_log = 0.0
        c_next = coef[1] / lead
    return OracleFit(
        leading_norm=float(lead),
        a2=float(base[2]),
        c_log=float(c_log),
        c_next=float(c_next),
        residual=residual,
        condition=condition,
        log_coefficient_recursion=float(log_coef),
        window=(x_lo, x_hi),
        horizon=horizon,
    )
