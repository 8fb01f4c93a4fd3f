"""Closed-form bulks: warped products, exact Einstein ends, hyperbolic balls.

Renormalized volumes of ends are computed three ways (pole splitting, a
contour integral in the Riesz parameter, and an epsilon-cutoff fit) so they
can be checked against each other.  Schlafli-type volume variations are
assembled from boundary data of explicit one-parameter Einstein families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from . import chart_geometry as cg
from .chart_geometry import ChartMetric
from .errors import ArgumentError, ConvergenceError, DomainError

SPLIT_POINT = 0.5

# ---------------------------------------------------------------------------
# warped products dt^2 + f(t)^2 h0


@dataclass
class WarpedMetric:
    """dt^2 + f(t)^2 base.

    ``warp`` is ``"cosh"``, a callable ``f`` (derivatives taken numerically),
    or a pair ``(t_samples, f_samples)`` interpolated by a cubic spline.
    """

    base: ChartMetric
    warp: object = "cosh"
    t_range: tuple = (-math.inf, math.inf)
    _spline: Optional[CubicSpline] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.warp, tuple):
            ts, fs = (np.asarray(a, float) for a in self.warp)
            if np.any(fs <= 0):
                raise DomainError("warp must be positive")
            self._spline = CubicSpline(ts, fs)
            self.t_range = (max(self.t_range[0], ts[0]), min(self.t_range[1], ts[-1]))

    @property
    def n(self):
        return self.base.dim

    @property
    def fuchsian(self):
        return (isinstance(self.warp, str) and self.warp == "cosh"
                and not self.base.is_grid and self.base.lam is not None
                and abs(self.base.lam + 1.0) < 1e-14)

    def profile(self, t):
        """(f, f', f'') at the probe times."""
        t = np.asarray(t, float)
        if isinstance(self.warp, str):
            if self.warp != "cosh":
                raise ArgumentError("unknown analytic warp", warp=self.warp)
            return np.cosh(t), np.sinh(t), np.cosh(t)
        if self._spline is not None:
            sp = self._spline
            return sp(t), sp(t, 1), sp(t, 2)
        fn = self.warp
        step = 1e-3
        # sixth-order central stencils
        f0 = fn(t)
        f1 = (-fn(t - 3 * step) + 9 * fn(t - 2 * step) - 45 * fn(t - step)
              + 45 * fn(t + step) - 9 * fn(t + 2 * step) + fn(t + 3 * step)) / (60 * step)
        f2 = (2 * fn(t - 3 * step) - 27 * fn(t - 2 * step) + 270 * fn(t - step) - 490 * f0
              + 270 * fn(t + step) - 27 * fn(t + 2 * step) + 2 * fn(t + 3 * step)) / (180 * step ** 2)
        return f0, f1, f2

    def in_x(self, x):
        """Tangential factor x^2 f(t)^2 at t = log(2/x) (one end)."""
        x = np.asarray(x, float)
        f, _, _ = self.profile(np.log(2.0 / x))
        return (x * f) ** 2


def _base_ricci_endomorphism(base: ChartMetric):
    if not base.is_grid:
        return base.lam * (base.dim - 1) * np.eye(base.dim)
    ric = cg.curvature_pack(base, with_riemann=False).ricci
    return np.einsum("...ij,...jk->...ik", base.inverse, ric)


def _base_sectional(base: ChartMetric):
    """Sectional curvatures of coordinate planes (None when undetermined)."""
    n = base.dim
    if not base.is_grid:
        if base.kind == "constant_curvature" or n == 2:
            return np.array([base.lam])
        return None
    riem = cg.curvature_pack(base).riemann
    g = base.components
    out = []
    for a in range(n):
        for b in range(a + 1, n):
            area = g[..., a, a] * g[..., b, b] - g[..., a, b] ** 2
            out.append((riem[..., a, b, b, a] / area).ravel())
    return np.concatenate(out)


@dataclass
class CurvatureReport:
    einstein_residual: float
    normal_residual: float
    tangential_residual: float
    mixed_sectional: np.ndarray
    tangential_sectional: Optional[np.ndarray]
    rxtt_residual: float
    max_sectional: Optional[float]


def warped_curvature(w: WarpedMetric, probes) -> CurvatureReport:
    """Ric_g + n g in a g-orthonormal frame at the probe times.

    Uses the generalized-cylinder decomposition with g_t = f^2 h0, whose
    Weingarten map is -(f'/f) Id; the mixed block vanishes identically.
    """
    probes = np.atleast_1d(np.asarray(probes, float))
    lo, hi = w.t_range
    if np.any(probes < lo) or np.any(probes > hi):
        raise ArgumentError("probe outside the t-range", t_range=w.t_range)
    n = w.n
    f, df, ddf = w.profile(probes)
    ric_end = _base_ricci_endomorphism(w.base)
    normal = -n * ddf / f + n
    tang = []
    ident = np.eye(n)
    for fi, dfi, ddfi in zip(f, df, ddf):
        block = ric_end / fi ** 2 - ((n - 1) * dfi ** 2 + fi * ddfi) / fi ** 2 * ident + n * ident
        tang.append(np.max(np.abs(block)))
    tang = np.array(tang)
    mixed = -ddf / f
    base_k = _base_sectional(w.base)
    tangential = None
    top = None
    if base_k is not None:
        tangential = base_k[None, :] / f[:, None] ** 2 - (df / f)[:, None] ** 2
        top = float(max(np.max(tangential), np.max(mixed)))
    return CurvatureReport(
        einstein_residual=float(max(np.max(np.abs(normal)), np.max(tang))),
        normal_residual=float(np.max(np.abs(normal))),
        tangential_residual=float(np.max(tang)),
        mixed_sectional=mixed,
        tangential_sectional=tangential,
        rxtt_residual=float(np.max(np.abs(mixed + 1.0))),
        max_sectional=top,
    )


# ---------------------------------------------------------------------------
# exact ends and their renormalized volume


@dataclass
class EndModel:
    """An end (dx^2 + h_x)/x^2 over a base of volume ``base_volume``.

    ``v`` is the volume density ratio v(x) as a callable accepting complex
    arrays, ``taylor`` its coefficients v_0..v_n, ``factor`` the tangential
    factor with h_x = factor(x) h0 (``None`` for non-conformal ends).
    Polynomial densities may pass all their coefficients as ``taylor`` so the
    remainder beyond x^n is formed without cancellation.
    """

    n: int
    v: Callable
    taylor: Sequence[float]
    base_volume: float = 1.0
    factor: Optional[Callable] = None
    lam: Optional[float] = None

    def tail(self, x):
        """(v - sum_{k<=n} v_k x^k) / x^{n+1}."""
        n = self.n
        if len(self.taylor) > n + 1:
            return sum(c * x ** (k - n - 1) for k, c in enumerate(self.taylor) if k > n)
        poly = sum(self.coefficient(k) * x ** k for k in range(n + 1))
        return (self.v(x) - poly) / x ** (n + 1)

    @classmethod
    def einstein(cls, n, lam, base_volume=1.0):
        """h_x = (1 - lam x^2/4)^2 h0 over an Einstein base with Ric = lam (n-1) h0."""
        poly = np.polynomial.polynomial
        taylor = poly.polypow([1.0, 0.0, -lam / 4.0], n)
        return cls(n, lambda x: (1 - lam * x ** 2 / 4) ** n, taylor, base_volume,
                   factor=lambda x: (1 - lam * x ** 2 / 4) ** 2, lam=lam)

    @classmethod
    def constant(cls, n, base_volume=1.0):
        taylor = np.zeros(n + 1)
        taylor[0] = 1.0
        return cls(n, lambda x: np.ones_like(x), taylor, base_volume, factor=lambda x: np.ones_like(x),
                   lam=0.0)

    def rescaled(self, c):
        """The same end seen from the representative e^{2c} h0, c constant."""
        if self.lam is None:
            raise DomainError("rescaling needs an Einstein end")
        end = EndModel.einstein(self.n, self.lam * math.exp(-2 * c),
                                self.base_volume * math.exp(self.n * c))
        return end

    def coefficient(self, k):
        return float(self.taylor[k]) if k < len(self.taylor) else 0.0


def _powers(end: EndModel):
    return [k for k in range(len(end.taylor)) if abs(end.coefficient(k)) > 0]


def _remainder_integral(end: EndModel, x0, z=0.0):
    """int_0^x0 x^{z-n-1} (v - Taylor_n) dx, for complex z with Re z > -1."""

    def part(fn):
        val, err = integrate.quad(fn, 0.0, x0, epsabs=1e-15, epsrel=1e-13, limit=200)
        if not np.isfinite(val) or err > 1e-9:
            raise ConvergenceError("remainder quadrature did not converge", tail_estimate=err)
        return val

    if np.iscomplexobj(z) or isinstance(z, complex):
        def integrand(x):
            return x ** z * end.tail(x)
        return part(lambda x: integrand(x).real) + 1j * part(lambda x: integrand(x).imag)
    return part(end.tail)


def collar_finite_part(end: EndModel, x0=SPLIT_POINT):
    """FP at z = 0 of int_0^x0 x^{z-n-1} v(x) dx by analytic pole splitting."""
    n = end.n
    total = 0.0
    for k in range(n):
        total += end.coefficient(k) * x0 ** (k - n) / (k - n)
    total += end.coefficient(n) * math.log(x0)
    return total + _remainder_integral(end, x0)


def _continued(end: EndModel, z, x0):
    n = end.n
    out = sum(end.coefficient(k) * x0 ** (z - n + k) / (z - n + k) for k in range(n + 1))
    return out + _remainder_integral(end, x0, complex(z))


def riesz_contour(end: EndModel, x0=SPLIT_POINT, radius=0.25, nodes=32):
    """Laurent data at z = 0 from trapezoidal contour integrals of the continuation."""
    theta = 2 * np.pi * (np.arange(nodes) + 0.5) / nodes
    zs = radius * np.exp(1j * theta)
    vals = np.array([_continued(end, z, x0) for z in zs])
    finite = float(np.mean(vals).real)
    residue = float(np.mean(vals * zs).real)
    return finite, residue


def hadamard_finite_part(end: EndModel, x0=SPLIT_POINT, eps=None):
    """Constant term of int_eps^x0 x^{-n-1} v dx, fitted over a range of eps."""
    n = end.n
    eps = np.geomspace(0.05, 0.3, 30) if eps is None else np.asarray(eps, float)
    vals = []
    for e in eps:
        val, err = integrate.quad(lambda x: x ** (-n - 1) * end.v(x), e, x0,
                                  epsabs=0.0, epsrel=2e-14, limit=400)
        vals.append(val)
    vals = np.array(vals)
    cols = [eps ** (k - n) for k in _powers(end) if k < n]
    cols.append(np.log(eps))
    labels = len(cols)
    cols.append(np.ones_like(eps))
    # corrections eps^{k-n}: same parity as n when the density is even
    even = all(k % 2 == 0 for k in _powers(end))
    start = 2 - n % 2
    for p in (range(start, start + 8, 2) if even else (1, 2, 3, 4, 5, 6)):
        cols.append(eps ** p)
    basis = np.array(cols).T
    scale = np.max(np.abs(basis), axis=0)
    coef, *_ = np.linalg.lstsq(basis / scale, vals, rcond=None)
    coef = coef / scale
    return float(coef[labels]), float(-coef[labels - 1])


@dataclass
class RieszVolume:
    finite_part: float
    residue: float
    collar_finite_part: float
    interior: float
    contour_finite_part: float
    hadamard_finite_part: float
    riesz_hadamard_gap: float
    residue_hadamard: float


def riesz_volume(end: EndModel, interior_volume_fn=None, x0=SPLIT_POINT) -> RieszVolume:
    """FP_{z=0} int x^z dvol_g and its residue over the collar {x < x0} plus interior.

    ``interior_volume_fn(x0)`` returns the volume of {x > x0}; it is scaled
    by nothing, so it must already include the base volume.
    """
    area = end.base_volume
    fp = collar_finite_part(end, x0)
    contour_fp, contour_res = riesz_contour(end, x0)
    had_fp, had_log = hadamard_finite_part(end, x0)
    interior = 0.0 if interior_volume_fn is None else float(interior_volume_fn(x0))
    return RieszVolume(
        finite_part=area * fp + interior,
        residue=area * end.coefficient(end.n),
        collar_finite_part=area * fp,
        interior=interior,
        contour_finite_part=area * contour_fp + interior,
        hadamard_finite_part=area * had_fp + interior,
        riesz_hadamard_gap=abs(area * (fp - had_fp)),
        residue_hadamard=area * had_log,
    )


def _gl_integral(fn, a, b, nodes=96):
    """Fixed Gauss-Legendre rule; complex-step friendly."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * np.sum(ws * fn(mid + half * xs))


def fuchsian_interior_volume(n, base_volume=1.0):
    """Volume of {t in [0, T]} for dt^2 + cosh^2 t h0 with T = log(2/x0)."""
    def vol(x0):
        top = math.log(2.0 / x0)
        if n == 2:
            return base_volume * (top / 2 + math.sinh(2 * top) / 4)
        return base_volume * float(_gl_integral(lambda t: np.cosh(t) ** n, 0.0, top))
    return vol


def fuchsian_end_match(x, n=2):
    """Compare the Fuchsian warp written in x with the exact lam = -1 end."""
    base = ChartMetric.einstein(n, -1.0)
    w = WarpedMetric(base)
    end = EndModel.einstein(n, -1.0)
    x = np.asarray(x, float)
    sampled = float(np.max(np.abs(w.in_x(x) - end.factor(x))))
    closed = np.array([1.0, 0.0, 0.5, 0.0, 1.0 / 16])
    poly = np.polynomial.polynomial.polypow([1.0, 0.0, 0.25], 2)
    return {"sampled": sampled, "termwise": float(np.max(np.abs(poly - closed)))}


# ---------------------------------------------------------------------------
# Polyakov check on a flat-torus end with a numerically integrated
# Hamilton-Jacobi equation (no recursion involved)


def hj_profile(h0: ChartMetric, omega0, x_max=0.3, degree=24, rtol=1e-13):
    """omega(x, y) for the end (dx^2 + h0)/x^2 over a flat torus.

    Integrates 2 d_x omega = -x((d_x omega)^2 + |d omega|^2) with
    omega(0) = omega0 by the method of lines and returns Chebyshev coefficients
    in x on [0, x_max] for every grid point.
    """
    if not h0.is_grid:
        raise ArgumentError("the Hamilton-Jacobi oracle needs a grid metric")
    shape = h0.grid.shape
    ginv = h0.inverse

    def rhs(x, w):
        wf = w.reshape(shape)
        dw = h0.grid.gradient(wf)
        q = np.einsum("...i,...ij,...j->...", dw, ginv, dw)
        rad = np.sqrt(np.maximum(1.0 - x * x * q, 0.0))
        return (-x * q / (1.0 + rad)).ravel()

    nodes = 0.5 * x_max * (1 - np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1)))
    nodes = np.sort(nodes)
    sol = integrate.solve_ivp(rhs, (0.0, x_max), np.asarray(omega0, float).ravel(),
                              method="DOP853", t_eval=nodes, rtol=rtol, atol=1e-15)
    if not sol.success:
        raise ConvergenceError("Hamilton-Jacobi integration failed", message=sol.message)
    mapped = 2 * nodes / x_max - 1
    coef = np.polynomial.chebyshev.chebfit(mapped, sol.y.T, degree)
    return coef, x_max


def _cutoff_depth(coef, x_max, eps):
    """Solve x e^{omega(x, y)} = eps pointwise by Newton iteration."""
    cheb = np.polynomial.chebyshev
    dcoef = cheb.chebder(coef) * (2 / x_max)
    x = np.full(coef.shape[1], eps)
    for _ in range(50):
        u = 2 * x / x_max - 1
        w = cheb.chebval(u, coef, tensor=False)
        dw = cheb.chebval(u, dcoef, tensor=False)
        step = (np.log(x) + w - math.log(eps)) / (1 / x + dw)
        x = x - step
        if np.max(np.abs(step)) < 1e-16 * np.max(x):
            break
    return x


def hadamard_shift_flat(h0: ChartMetric, omega0, eps=None, x_max=0.3):
    """FP_{eps->0} [Vol{x_hat > eps} - Vol{x > eps}] on the flat-torus end."""
    n = h0.dim
    if n != 2:
        raise DomainError("the flat-end oracle is implemented for n = 2", n=n)
    coef, x_max = hj_profile(h0, omega0, x_max=x_max)
    eps = np.geomspace(0.01, 0.08, 16) if eps is None else np.asarray(eps, float)
    dens = h0.sqrt_det.ravel() * h0.grid.cell_volume
    vals = []
    for e in eps:
        depth = _cutoff_depth(coef, x_max, e)
        vals.append(float(np.sum(0.5 * (depth ** -2.0 - e ** -2.0) * dens)))
    basis = np.array([eps ** -2.0, np.ones_like(eps), eps ** 2, eps ** 4, eps ** 6]).T
    scale = np.max(np.abs(basis), axis=0)
    c, *_ = np.linalg.lstsq(basis / scale, np.array(vals), rcond=None)
    return float(c[1] / scale[1])


# ---------------------------------------------------------------------------
# Schlafli formula for Einstein families with boundary


@dataclass
class BoundaryData:
    metric: np.ndarray      # (m, n, n) induced metric at sample points
    second_form: np.ndarray  # (m, n, n), inward normal
    weights: np.ndarray     # (m,) coordinate measure; dvol = sqrt(det) * weights


def _collar_second_form(collar, t, step=2e-3):
    """II = -1/2 d_x h_x at x = 0 (eighth-order central difference in x)."""
    c = (4 / 5, -1 / 5, 4 / 105, -1 / 280)
    d = sum(ck * (collar(t, (k + 1) * step) - collar(t, -(k + 1) * step)) for k, ck in enumerate(c))
    return -0.5 * d / step


class EinsteinFamily:
    """One-parameter family of Einstein metrics Ric = n lam(t) g on a fixed manifold."""

    name = "family"
    n = 2
    weights = np.array([1.0])

    def lam(self, t):
        raise NotImplementedError

    def volume(self, t):
        raise NotImplementedError

    def collar(self, t, x):
        """Induced metrics on the level sets at inward distance x, shape (m, n, n)."""
        raise NotImplementedError

    def boundary(self, t) -> BoundaryData:
        return BoundaryData(self.collar(t, 0.0), _collar_second_form(self.collar, t), self.weights)

    def describe(self):
        return {"family": self.name}


def _sinh_profile(kappa, r):
    root = np.sqrt(kappa)
    return np.sinh(root * r) / root


def _sphere_area(n):
    return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


class HyperbolicBallFamily(EinsteinFamily):
    """Balls of radius R in hyperbolic space of curvature -(kappa0 + rate t)."""

    name = "hyperbolic_ball"

    def __init__(self, n=2, radius=1.0, kappa0=1.0, rate=1.0):
        self.n, self.radius, self.kappa0, self.rate = n, radius, kappa0, rate
        self.weights = np.array([_sphere_area(n)])

    def kappa(self, t):
        return self.kappa0 + self.rate * t

    def lam(self, t):
        return -self.kappa(t)

    def volume(self, t):
        kap, rad = self.kappa(t), self.radius
        if self.n == 2:
            root = np.sqrt(kap)
            return 4 * np.pi * (np.sinh(2 * root * rad) / (4 * root) - rad / 2) / kap
        return _sphere_area(self.n) * _gl_integral(lambda r: _sinh_profile(kap, r) ** self.n, 0.0, rad)

    def collar(self, t, x):
        s = _sinh_profile(self.kappa(t), self.radius - x)
        return (s ** 2) * np.eye(self.n)[None]

    def describe(self):
        return {"family": self.name, "n": self.n, "radius": self.radius,
                "kappa0": self.kappa0, "rate": self.rate}


class BallDiffeomorphismFamily(EinsteinFamily):
    """Pull-backs of a fixed hyperbolic ball under r -> r + t psi(r), psi(R) = 0."""

    name = "ball_diffeomorphism"

    def __init__(self, n=2, radius=1.0, kappa=1.0, strength=0.3):
        self.n, self.radius, self.kappa_value, self.strength = n, radius, kappa, strength
        self.weights = np.array([_sphere_area(n)])

    def psi(self, r):
        return self.strength * r ** 2 * (self.radius - r)

    def dpsi(self, r):
        return self.strength * (2 * r * self.radius - 3 * r ** 2)

    def lam(self, t):
        return -self.kappa_value + 0.0 * t

    def volume(self, t):
        kap = self.kappa_value

        def density(r):
            return _sinh_profile(kap, r + t * self.psi(r)) ** self.n * (1 + t * self.dpsi(r))

        return _sphere_area(self.n) * _gl_integral(density, 0.0, self.radius)

    def collar(self, t, x):
        # inward distance x from r = R in the pulled-back metric is R - r - t psi(r), so the
        # level set at distance x is the image sphere of radius R - x
        s = _sinh_profile(self.kappa_value + 0.0 * t, self.radius - x)
        return (s ** 2) * np.eye(self.n)[None]

    def describe(self):
        return {"family": self.name, "n": self.n, "radius": self.radius,
                "kappa": self.kappa_value, "strength": self.strength}


class FuchsianCylinderFamily(EinsteinFamily):
    """{|t| <= T(s)} in dt^2 + cosh^2 t h0, pulled back to a fixed slab."""

    name = "fuchsian_cylinder"

    def __init__(self, n=2, half_width=1.0, rate=1.0, base_volume=1.0):
        self.n, self.half_width, self.rate, self.base_volume = n, half_width, rate, base_volume
        self.weights = np.array([base_volume, base_volume])

    def width(self, s):
        return self.half_width + self.rate * s

    def lam(self, s):
        return -1.0 + 0.0 * s

    def volume(self, s):
        top = self.width(s)
        if self.n == 2:
            return self.base_volume * (top + np.sinh(2 * top) / 2)
        return 2 * self.base_volume * _gl_integral(lambda t: np.cosh(t) ** self.n, 0.0, top)

    def collar(self, s, x):
        c = np.cosh(self.width(s) - x) ** 2
        return c * np.stack([np.eye(self.n), np.eye(self.n)])

    def describe(self):
        return {"family": self.name, "n": self.n, "half_width": self.half_width,
                "rate": self.rate, "base_volume": self.base_volume}


FAMILIES = {
    "hyperbolic_ball": HyperbolicBallFamily,
    "ball_diffeomorphism": BallDiffeomorphismFamily,
    "fuchsian_cylinder": FuchsianCylinderFamily,
}


def family_from_spec(spec):
    """Build a family from ``{"family": name, "params": {...}}``."""
    name = spec.get("family")
    if name not in FAMILIES:
        raise ArgumentError("unknown family", family=name, known=sorted(FAMILIES))
    return FAMILIES[name](**spec.get("params", {}))


def _complex_step(fn, t, step=1e-20):
    return np.imag(fn(t + 1j * step)) / step


@dataclass
class SchlafliResult:
    lhs: float
    rhs: float
    gap: float
    volume_term: float
    boundary_term: float


def schlafli_terms(family: EinsteinFamily, t0=0.0) -> SchlafliResult:
    n = family.n
    lam0 = float(np.real(family.lam(t0)))
    if abs(lam0) < 1e-14:
        raise DomainError("the Schlafli formula needs a nonzero Einstein constant", lam=lam0)
    lam_dot = float(_complex_step(family.lam, t0))
    lhs = float(_complex_step(family.volume, t0))
    vol = float(np.real(family.volume(t0)))
    data = family.boundary(t0)

    def mean_curvature(t):
        b = family.boundary(t)
        return np.einsum("mij,mji->m", np.linalg.inv(b.metric), b.second_form)

    h_dot = _complex_step(mean_curvature, t0)
    g_dot = _complex_step(lambda t: family.collar(t, 0.0), t0)
    ginv = np.linalg.inv(data.metric)
    pairing = np.einsum("mij,mjk,mkl,mli->m", ginv, g_dot, ginv, data.second_form)
    dvol = np.sqrt(np.linalg.det(data.metric)) * data.weights
    boundary = float(np.sum((h_dot + 0.5 * pairing) * dvol))
    volume_term = -(n + 1) * lam_dot / (2 * lam0) * vol
    rhs = volume_term - boundary / (n * lam0)
    return SchlafliResult(lhs, rhs, abs(lhs - rhs), volume_term, -boundary / (n * lam0))


_CONVENTION_CHECKED = False


def _convention_self_test():
    """Hyperbolic ball: inward II must be positive and the formula must close."""
    global _CONVENTION_CHECKED
    if _CONVENTION_CHECKED:
        return
    fam = HyperbolicBallFamily()
    ii = fam.boundary(0.0).second_form[0, 0, 0]
    res = schlafli_terms(fam)
    if not (ii > 0 and res.gap < 1e-8 * max(1.0, abs(res.lhs))):
        raise AssertionError("Schlafli sign conventions failed the hyperbolic-ball self-test")
    _CONVENTION_CHECKED = True


def schlafli_check(family: EinsteinFamily, params: Optional[Sequence[float]] = None):
    """lhs = dVol/dt, rhs from boundary data, and the gap, at each parameter value."""
    _convention_self_test()
    params = [0.0] if params is None else list(params)
    return [(t, schlafli_terms(family, t)) for t in params]


# ---------------------------------------------------------------------------
# pointwise n = 2 quasi-Fuchsian deformation algebra


def _ip(h, a, b):
    hinv = np.linalg.inv(h)
    return float(np.trace(hinv @ a @ hinv @ b))


def qf_model_identities_n2(h0_point, k_point, s=1e-3):
    """Pointwise identities for h2^s = h0/2 + s k and h_-^s = 4 h2^s h0^{-1} h2^s."""
    h0 = np.asarray(h0_point, float)
    k = np.asarray(k_point, float)
    h0inv = np.linalg.inv(h0)
    if abs(np.trace(h0inv @ k)) > 1e-12 * max(1.0, np.max(np.abs(k))):
        raise ArgumentError("k must be trace-free with respect to h0")

    def h2(sv):
        return 0.5 * h0 + sv * k

    def hminus(sv):
        a = h2(sv)
        return 4 * a @ h0inv @ a

    def trace_h2(sv):
        return float(np.trace(np.linalg.inv(hminus(sv)) @ h2(sv)))

    ksq = k @ h0inv @ k
    knorm = _ip(h0, k, k)
    # quadratic fits in s through symmetric samples
    grid = s * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    samples = np.array([hminus(sv) for sv in grid])
    vander = np.vander(grid, 3, increasing=True)
    fit = np.linalg.lstsq(vander, samples.reshape(len(grid), -1), rcond=None)[0]
    hdot = fit[1].reshape(h0.shape)
    hddot = 2 * fit[2].reshape(h0.shape)
    traces = np.array([trace_h2(sv) for sv in grid])
    tfit = np.linalg.lstsq(vander, traces, rcond=None)[0]
    quoted = _ip(h0, hdot, k) - 0.5 * _ip(h0, hddot, h0)
    # omitted pieces of the s-derivative of <h_-', h2 - tr(h2) h_-> dvol at s = 0
    full = (_ip(h0, hddot, 0.5 * h0 - h0) + _ip(h0, hdot, k - hdot)
            + 2 * float(np.trace(h0inv @ hdot @ h0inv @ hdot @ h0inv @ (0.5 * h0))))
    # area-preserving conformal factor: e^{2 w} dvol(h_-^s) = dvol(h0) pointwise
    omega = np.array([-0.25 * math.log(np.linalg.det(hminus(sv)) / np.linalg.det(h0)) for sv in grid])
    scal = np.array([-2 * trace_h2(sv) for sv in grid])
    shift = -0.25 * scal * omega
    # the shift is not polynomial in s; interpolate through all five samples
    sfit = np.linalg.solve(np.vander(grid, 5, increasing=True), shift)
    return {
        "trace_h2": trace_h2(s),
        "trace_linear_coefficient": float(tfit[1]),
        "hminus_dot": hdot,
        "hminus_dot_error": float(np.max(np.abs(hdot - 4 * k))),
        "hminus_ddot": hddot,
        "hminus_ddot_error": float(np.max(np.abs(hddot - 8 * ksq))),
        "quoted_combination": quoted,
        "full_second_variation_integrand": full,
        "k_norm_sq": knorm,
        "volume_shift_s2_coefficient": float(sfit[2]),
        "volume_shift_ratio_to_k_norm_sq": float(sfit[2] / knorm) if knorm else None,
    }


__all__ = [
    "BallDiffeomorphismFamily",
    "BoundaryData",
    "CurvatureReport",
    "EinsteinFamily",
    "EndModel",
    "FAMILIES",
    "FuchsianCylinderFamily",
    "HyperbolicBallFamily",
    "RieszVolume",
    "SchlafliResult",
    "WarpedMetric",
    "collar_finite_part",
    "family_from_spec",
    "fuchsian_end_match",
    "fuchsian_interior_volume",
    "hadamard_finite_part",
    "hadamard_shift_flat",
    "hj_profile",
    "qf_model_identities_n2",
    "riesz_contour",
    "riesz_volume",
    "schlafli_check",
    "schlafli_terms",
    "warped_curvature",
]
