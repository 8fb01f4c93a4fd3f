"""Interval certificate that H_0 > 0 on the whole resolved spectrum (n = 4).

Real branch, x = u^2 + 1/4:  H_0(u) = a(u) x (x + 2) + x^2 + 2 with a(u)
increasing.  For a lower bound a_k of a on [u_k, inf) the quadratic
P_a(x) = a x(x+2) + x^2 + 2 is positive below its smallest positive root, so
the interval up to that root is covered and a is re-bounded there.  The ladder
ends once a_k >= 0.

Imaginary branch, v = 1/2 - lam in (0, 1/2]:  H_0 = v (v - 2) * B(v) with
B = (a(v) + 1)(v^2 - 1) - 4v, so positivity is B < 0, equivalently
g(v) = 4v/(1 - v^2) + a(v) + 1 > 0, checked on an adaptive subdivision of
the closed interval [0, 1/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import special as sf
from .intervals import LN2, PI, ROUNDING, Interval, isqrt, itan, trigamma_enclosure
from .spectral import SpectralPoint, hessian_multiplier_H, h_lower_curve

LADDER_START = -3.468
ROOT_SHRINK = 1e-9


@dataclass(frozen=True)
class LadderStep:
    index: int
    a_lower: float
    u_start: float
    u_end: float
    x_end: float
    p_end_lower: float


@dataclass(frozen=True)
class ImaginaryCell:
    v_lo: float
    v_hi: float
    g_lower: float
    depth: int


@dataclass(frozen=True)
class PositivityCertificate:
    ladder: tuple
    imaginary: tuple
    tail_threshold: float
    a_zero: Interval
    endpoint_margin: Interval
    c0: Interval
    derivative_comparison: dict
    rounding: str
    verdict: str
    failures: tuple = field(default_factory=tuple)
    u_max: float = math.inf

    @property
    def certified(self):
        return self.verdict == "certified"

    def serialize(self):
        lines = [
            "renvol positivity certificate for H_0 (n = 4)",
            f"verdict: {self.verdict}",
            f"rounding: {self.rounding}",
            f"a(0) enclosure: [{self.a_zero.lo!r}, {self.a_zero.hi!r}]",
            f"c0 enclosure: [{self.c0.lo!r}, {self.c0.hi!r}]",
            f"g(0) = 3/2 - 2 ln 2 enclosure: [{self.endpoint_margin.lo!r}, {self.endpoint_margin.hi!r}]",
            f"tail threshold u*: {self.tail_threshold!r}",
            f"ladder steps: {len(self.ladder)}",
            "[real-ladder] index a_lower u_start u_end x_end P_end_lower",
        ]
        for step in self.ladder:
            lines.append(
                f"{step.index} {step.a_lower!r} {step.u_start!r} {step.u_end!r} {step.x_end!r} {step.p_end_lower!r}"
            )
        lines.append(f"[imaginary-cells] count {len(self.imaginary)}: v_lo v_hi g_lower depth")
        for cell in self.imaginary:
            lines.append(f"{cell.v_lo!r} {cell.v_hi!r} {cell.g_lower!r} {cell.depth}")
        lines.append("[derivative-comparison]")
        for key, value in self.derivative_comparison.items():
            lines.append(f"{key}: {value}")
        lines.append("[failures]")
        lines.extend(self.failures or ("none",))
        return "\n".join(lines) + "\n"


def _quadratic(a, x):
    a = Interval.point(a) if not isinstance(a, Interval) else a
    return a * x * (x + 2.0) + x.sqr() + 2.0


def _smallest_root(a):
    """Enclosure of the smallest positive root of (a+1) x^2 + 2a x + 2, or None."""
    a_box = Interval.point(a)
    disc = 4.0 * a_box.sqr() - 8.0 * (a_box + 1.0)
    if disc.hi < 0:
        return None
    if disc.lo < 0:
        raise ArithmeticError("discriminant sign undecided")
    return 4.0 / (-2.0 * a_box + isqrt(disc))


def _tail_threshold():
    lo, hi = 0.0, 1.0
    while sf.a_real(hi) < 0:
        lo, hi = hi, 2 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if sf.a_real(mid) < 0 else (lo, mid)
    u_star = hi
    while sf.a_real_enclosure(u_star).lo < 0:
        u_star *= 1 + 1e-12
    return u_star


def _real_ladder(max_steps, failures):
    steps = []
    a_k = LADDER_START
    u_k = 0.0
    u_star = _tail_threshold()
    for index in range(max_steps):
        if a_k >= 0:
            break
        root = _smallest_root(a_k)
        if root is None or (u_star * u_star + 0.25) <= root.lo:
            # P_{a_k} stays positive up to x(u*), where a >= 0 is certified
            x_end = u_star * u_star + 0.25
            p_low = _quadratic(a_k, Interval.point(x_end)).lo
            steps.append(LadderStep(index, a_k, u_k, u_star, x_end, p_low))
            if p_low <= 0:
                failures.append(f"ladder step {index}: P not positive at the tail threshold")
            a_k = sf.a_real_enclosure(u_star).lo
            u_k = u_star
            continue
        x_end = root.lo * (1 - ROOT_SHRINK)
        p_end = _quadratic(a_k, Interval.point(x_end))
        if not p_end.positive():
            failures.append(f"ladder step {index}: P_a(x_end) not certified positive")
        if x_end <= 0.25:
            failures.append(f"ladder step {index}: crossover below x = 1/4")
            break
        u_next = isqrt(Interval.point(x_end) - 0.25).lo
        if u_next <= u_k:
            failures.append(f"ladder step {index}: no progress")
            break
        a_next = sf.a_real_enclosure(u_next).lo
        steps.append(LadderStep(index, a_k, u_k, u_next, x_end, p_end.lo))
        if a_next <= a_k:
            failures.append(f"ladder step {index}: a_k not increasing")
            break
        a_k, u_k = a_next, u_next
    else:
        failures.append("ladder did not terminate within the step cap")
    if a_k < 0:
        failures.append("ladder stopped before a_k >= 0")
    return steps, u_star


def _g_box(v: Interval):
    return 4.0 * v / (1.0 - v.sqr()) + sf.a_imag_enclosure(v) + 1.0


def _imaginary_cells(initial_cells, depth_cap, failures):
    edges = np.linspace(0.0, 0.5, initial_cells + 1)
    pending = [(float(a), float(b), 0) for a, b in zip(edges[:-1], edges[1:])]
    cells = []
    while pending:
        lo, hi, depth = pending.pop()
        g_value = _g_box(Interval(lo, hi))
        if g_value.positive():
            cells.append(ImaginaryCell(lo, hi, g_value.lo, depth))
            continue
        if depth >= depth_cap:
            failures.append(f"imaginary cell [{lo!r}, {hi!r}] unresolved at depth {depth}")
            continue
        mid = 0.5 * (lo + hi)
        pending.extend([(lo, mid, depth + 1), (mid, hi, depth + 1)])
    cells.sort(key=lambda c: c.v_lo)
    return cells


def _minus_a_prime_gap(box: Interval):
    """Enclosure of 4(1+v^2)/(1-v^2)^2 - (-a'(v)) over a cell."""
    tan_sq = itan(PI * box / 2.0).sqr()
    trig = Interval(trigamma_enclosure(box.hi + 2.0).lo, trigamma_enclosure(box.lo + 2.0).hi)
    minus_da = PI.sqr() / 2.0 * (1.0 + tan_sq) - 2.0 * trig
    bound = 2.0 * (1.0 / (1.0 - box).sqr() + 1.0 / (1.0 + box).sqr())
    return bound - minus_da


def _derivative_comparison(initial_cells=16, depth_cap=12):
    """Check -a'(v) < 4(1+v^2)/(1-v^2)^2 by subdivision.

    The two sides coincide at v = 1/2 (both equal 80/9), so cells touching
    1/2 can never be certified strictly; the uncovered length is reported.
    """
    edges = np.linspace(0.0, 0.5, initial_cells + 1)
    pending = [(float(a), float(b), 0) for a, b in zip(edges[:-1], edges[1:])]
    certified, open_cells = 0.0, []
    while pending:
        lo, hi, depth = pending.pop()
        if _minus_a_prime_gap(Interval(lo, hi)).positive():
            certified += hi - lo
        elif depth >= depth_cap:
            open_cells.append((lo, hi))
        else:
            mid = 0.5 * (lo + hi)
            pending.extend([(lo, mid, depth + 1), (mid, hi, depth + 1)])
    open_cells.sort()
    merged = []
    for lo, hi in open_cells:
        if merged and merged[-1][1] == lo:
            merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    at_half = math.pi**2 - 2 * (math.pi**2 / 2 - 4 - 4 / 9)
    return {
        "certified_length": certified,
        "uncertified_cells": merged,
        "minus_a_prime_at_half": at_half,
        "bound_at_half": 80 / 9,
    }


def positivity_certificate(u_max=None, max_steps=500, depth_cap=20, initial_cells=16):
    """Build the certificate; ``u_max`` only adds a coverage check."""
    failures = []
    a_zero = sf.a_zero_enclosure()
    if not (a_zero.lo > LADDER_START):
        failures.append("a(0) enclosure does not sit above the ladder start")
    steps, u_star = _real_ladder(max_steps, failures)
    cells = _imaginary_cells(initial_cells, depth_cap, failures)
    endpoint = 1.5 - 2.0 * LN2
    if not endpoint.positive():
        failures.append("g(0) = 3/2 - 2 ln 2 not certified positive")
    c0 = sf.c0_enclosure()
    if not (c0.lo > -4):
        failures.append("c0 > -4 not certified")
    covered = sum(c.v_hi - c.v_lo for c in cells)
    if abs(covered - 0.5) > 1e-15:
        failures.append("imaginary cells do not cover [0, 1/2]")
    if u_max is not None and steps and steps[-1].u_end < min(u_max, u_star):
        failures.append("ladder coverage below u_max")
    if failures:
        verdict = "failed"
    elif ROUNDING != "rigorous":
        verdict = "heuristic"
    else:
        verdict = "certified"
    return PositivityCertificate(
        ladder=tuple(steps),
        imaginary=tuple(cells),
        tail_threshold=u_star,
        a_zero=a_zero,
        endpoint_margin=endpoint,
        c0=c0,
        derivative_comparison=_derivative_comparison(),
        rounding=ROUNDING,
        verdict=verdict,
        failures=tuple(failures),
        u_max=math.inf if u_max is None else float(u_max),
    )


def spot_check(certificate: PositivityCertificate, count=10_000, seed=0, u_range=60.0):
    """Plain-float H_0 through the assembly route at random certified points."""
    rng = np.random.default_rng(seed)
    half = count // 2
    us = np.concatenate([rng.uniform(0, 3 * certificate.tail_threshold, half // 2),
                         rng.uniform(0, u_range, half - half // 2)])
    vs = rng.uniform(0.0, 0.5, count - half)
    vs = vs[vs > 1e-9]
    real_vals = [hessian_multiplier_H(SpectralPoint(2.25 + u * u, 4, 0)) for u in us]
    imag_vals = [hessian_multiplier_H(SpectralPoint(2.25 - (0.5 - v) ** 2, 4, 0)) for v in vs]
    return {
        "real_min": float(np.min(real_vals)),
        "imaginary_min": float(np.min(imag_vals)),
        "count": len(real_vals) + len(imag_vals),
        "non_positive": int(np.sum(np.array(real_vals) <= 0) + np.sum(np.array(imag_vals) <= 0)),
    }


def real_curve_rows(u_max=1.5, count=301):
    rows = []
    for u in np.linspace(0.0, u_max, count):
        h0 = hessian_multiplier_H(SpectralPoint(2.25 + u * u, 4, 0))
        h1 = hessian_multiplier_H(SpectralPoint(2.25 + u * u, 4, 1))
        rows.append((float(u), h0, h1, h_lower_curve(u)))
    return rows


def imaginary_curve_rows(u_max=0.5, count=201, margin=1e-3):
    """(u, H_0(-iu), H_1(-iu)) for u in [0, u_max); H_1 has a pole at u = 1/2."""
    top = min(u_max, 0.5 - margin)
    rows = []
    for u in np.linspace(0.0, top, count):
        gam = 2.25 - u * u
        rows.append((float(u), hessian_multiplier_H(SpectralPoint(gam, 4, 0)),
                     hessian_multiplier_H(SpectralPoint(gam, 4, 1))))
    return rows
