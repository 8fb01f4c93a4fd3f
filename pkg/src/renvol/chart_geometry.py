"""Tensor calculus on periodic charts and closed-form model metrics.

Grid fields are stored grid-first: a scalar field has shape ``grid``, a
1-form ``grid + (n,)`` and a 2-tensor ``grid + (n, n)``, so ``numpy.linalg``
acts on the trailing axes.  Model metrics use an empty grid shape ``()`` and
stand for a single orthonormal frame of a homogeneous space.

Sign convention: ``divergence`` returns delta(t)_j = -nabla^i t_ij, the
formal adjoint of the symmetrized covariant derivative ``delta_star``.  With
this convention the second Bianchi identity reads delta(Ric) = -1/2 dScal.
The convention is asserted by ``_convention_selftest`` at import.
"""

from __future__ import annotations

import json
import math
import os
from itertools import combinations
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as spla

from .errors import AliasingError, DomainError, ShapeError, SingularityError


TOL_ALGEBRAIC = 1e-10
TOL_ELLIPTIC = 1e-8
TOL_NESTED = 1e-6


def _workers():
    try:
        return max(1, int(os.environ.get("RENVOL_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# spectral grid


class TorusGrid:
    """Uniform grid on [0, 2pi)^n with trigonometric differentiation."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in self.shape):
            raise ShapeError("grid sizes must be positive", shape=self.shape)
        self.dim = len(self.shape)
        self._ik = []
        for size in self.shape:
            k = np.fft.fftfreq(size, 1.0 / size)
            if size % 2 == 0:
                k[size // 2] = 0.0  # drop the unpaired Nyquist mode
            self._ik.append(1j * k)
        self._ik_half = [ik[: s // 2 + 1].copy() for ik, s in zip(self._ik, self.shape)]
        for ik, s in zip(self._ik_half, self.shape):
            if s % 2 == 0:
                ik[-1] = 0.0
            if s > 1 and s % 2 == 1:
                ik[:] = 1j * np.arange(s // 2 + 1)

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and other.shape == self.shape

    def __hash__(self):
        return hash(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def cell_volume(self):
        return (2 * np.pi) ** self.dim / self.size

    def axes(self):
        return [2 * np.pi * np.arange(s) / s for s in self.shape]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self, axis):
        return np.fft.fftfreq(self.shape[axis], 1.0 / self.shape[axis])

    def diff(self, f, axis):
        """Spectral derivative of a grid-first array along one grid axis."""
        if self.shape[axis] == 1:
            return np.zeros(f.shape, dtype=float)
        fh = sfft.rfft(f, axis=axis, workers=_workers())
        shape = [1] * f.ndim
        shape[axis] = fh.shape[axis]
        fh *= self._ik_half[axis].reshape(shape)
        return sfft.irfft(fh, n=self.shape[axis], axis=axis, workers=_workers())

    def gradient(self, f):
        """Stack of partial derivatives; derivative index right after the grid axes."""
        nd = self.dim
        return np.stack([self.diff(f, a) for a in range(nd)], axis=nd)

    def gradient_sym(self, f):
        """Gradient of a field of symmetric matrices, differentiating the upper triangle only."""
        k = f.shape[-1]
        rows, cols = np.triu_indices(k)
        packed = self.gradient(f[..., rows, cols])
        out = np.empty(packed.shape[:-1] + (k, k))
        out[..., rows, cols] = packed
        out[..., cols, rows] = packed
        return out

    def integrate(self, f):
        return float(np.sum(f) * self.cell_volume)


# ---------------------------------------------------------------------------
# packing helpers


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _triu_index(n):
    return np.triu_indices(n)


def pack_sym(full):
    iu = _triu_index(full.shape[-1])
    return np.ascontiguousarray(full[..., iu[0], iu[1]])


def unpack_sym(packed, n):
    iu = _triu_index(n)
    out = np.empty(packed.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = packed
    out[..., iu[1], iu[0]] = packed
    return out


# ---------------------------------------------------------------------------
# metric and tensor types


class ChartMetric:
    """A Riemannian metric on a torus chart or an analytic model.

    Parameters
    ----------
    dim : int
        Dimension n.
    kind : str
        ``"grid"``, ``"einstein"`` (Ric = lam (n-1) g), ``"constant_curvature"``
        (sectional curvature ``kappa``) or ``"warped"``.
    components : array
        Grid kinds: shape ``resolution + (n, n)``.  Model kinds: the constant
        frame matrix (identity by default).
    """

    def __init__(self, dim, kind="grid", components=None, lam=None, kappa=None,
                 warp=None, base=None, fourier_coeffs=None, check=True):
        self.dim = int(dim)
        self.kind = kind
        self.lam = None if lam is None else float(lam)
        self.kappa = None if kappa is None else float(kappa)
        self.warp = warp
        self.base = base
        self.fourier_coeffs = fourier_coeffs
        if kind == "constant_curvature":
            self.lam = self.kappa
        if components is None:
            components = np.eye(self.dim)
        comp = np.array(components, dtype=float)
        if comp.shape[-2:] != (self.dim, self.dim):
            raise ShapeError("metric components must end with (n, n)", shape=comp.shape)
        comp = _sym(comp)
        comp.setflags(write=False)
        self.components = comp
        self.grid = TorusGrid(comp.shape[:-2]) if kind == "grid" else TorusGrid(())
        if self.kind == "grid" and self.grid.dim != self.dim:
            raise ShapeError("grid rank must equal metric dimension",
                             grid=self.grid.shape, dim=self.dim)
        if check:
            lo = float(np.min(np.linalg.eigvalsh(comp)))
            if not lo > 0:
                raise DomainError("metric is not positive definite", min_eigenvalue=lo)

    # -- constructors -----------------------------------------------------

    @classmethod
    def flat(cls, dim, resolution):
        res = _resolution(dim, resolution)
        return cls(dim, "grid", np.broadcast_to(np.eye(dim), res + (dim, dim)))

    @classmethod
    def einstein(cls, dim, lam, frame=None):
        return cls(dim, "einstein", frame, lam=lam)

    @classmethod
    def constant_curvature(cls, dim, kappa, frame=None):
        return cls(dim, "constant_curvature", frame, kappa=kappa)

    @classmethod
    def from_fourier(cls, dim, resolution, coeffs, base=None):
        """Metric ``base + sum_k (A_k cos k.theta + B_k sin k.theta)``.

        ``coeffs`` maps an integer mode tuple to ``(A_k, B_k)`` symmetric
        matrices.  Modes above one third of the axis resolution are rejected.
        """
        res = _resolution(dim, resolution)
        grid = TorusGrid(res)
        for mode in coeffs:
            for size, k in zip(res, mode):
                if size > 1 and abs(k) > size // 3:
                    raise AliasingError("mode exceeds the 1/3 band limit",
                                        mode=tuple(mode), resolution=res)
                if size == 1 and k != 0:
                    raise AliasingError("mode along a collapsed axis", mode=tuple(mode))
        comp = _synthesize(res, {k: (_sym(np.asarray(a, float)), _sym(np.asarray(b, float)))
                                 for k, (a, b) in coeffs.items()}, (dim, dim))
        comp += np.eye(dim) if base is None else np.asarray(base, float)
        m = cls(dim, "grid", comp)
        m.fourier_coeffs = {tuple(k): (np.asarray(a).tolist(), np.asarray(b).tolist())
                            for k, (a, b) in coeffs.items()}
        return m

    @classmethod
    def random(cls, dim, resolution, seed=0, amplitude=0.1, max_mode=None):
        """Random band-limited perturbation of the flat metric."""
        rng = np.random.default_rng(seed)
        res = _resolution(dim, resolution)
        coeffs = _random_modes(rng, res, dim, amplitude, max_mode, matrix=True)
        return cls.from_fourier(dim, res, coeffs)

    @classmethod
    def random_conformal(cls, dim, resolution, seed=0, amplitude=0.2, max_mode=None):
        """Bumpy exp(2 phi) times the flat metric with band-limited phi."""
        res = _resolution(dim, resolution)
        phi = random_scalar(res, seed=seed, amplitude=amplitude, max_mode=max_mode)
        return cls.flat(dim, res).conformal(phi)

    def conformal(self, omega):
        """The metric exp(2 omega) g (grid kinds)."""
        self._require_grid()
        omega = np.asarray(omega, float)
        if omega.shape != self.grid.shape:
            raise ShapeError("conformal factor sampled on a different grid")
        return ChartMetric(self.dim, "grid", np.exp(2 * omega)[..., None, None] * self.components)

    def scaled(self, factor):
        out = ChartMetric(self.dim, self.kind, self.components * float(factor),
                          lam=None if self.lam is None else self.lam / factor,
                          kappa=None if self.kappa is None else self.kappa / factor,
                          warp=self.warp, base=self.base)
        return out

    @classmethod
    def from_spec(cls, spec):
        """Build from a JSON-compatible dict (see the CLI metric-spec format)."""
        if isinstance(spec, str):
            with open(spec) as fh:
                spec = json.load(fh)
        dim = int(spec["dim"])
        kind = spec.get("kind", "grid")
        if kind == "grid":
            res = spec["resolution"]
            if "fourier_coeffs" in spec:
                coeffs = {}
                for entry in spec["fourier_coeffs"]:
                    mode = tuple(entry["mode"])
                    a = np.array(entry.get("cos", np.zeros((dim, dim))), float)
                    b = np.array(entry.get("sin", np.zeros((dim, dim))), float)
                    coeffs[mode] = (a, b)
                return cls.from_fourier(dim, res, coeffs)
            if "random" in spec:
                r = spec["random"]
                return cls.random(dim, res, seed=r.get("seed", 0),
                                  amplitude=r.get("amplitude", 0.1),
                                  max_mode=r.get("max_mode"))
            return cls.flat(dim, res)
        if kind == "einstein":
            return cls.einstein(dim, spec["lambda"])
        if kind == "constant_curvature":
            return cls.constant_curvature(dim, spec["kappa"])
        raise DomainError("unknown metric kind", kind=kind)

    # -- properties -------------------------------------------------------

    @property
    def is_grid(self):
        return self.kind == "grid"

    @property
    def resolution(self):
        return self.grid.shape

    def _require_grid(self):
        if not self.is_grid:
            raise DomainError("operation needs a grid metric", kind=self.kind)

    def same_chart(self, other):
        return self.dim == other.dim and self.grid == other.grid

    @cached_property
    def inverse(self):
        return _sym(np.linalg.inv(self.components))

    @cached_property
    def sqrt_det(self):
        return np.sqrt(np.linalg.det(self.components))

    @cached_property
    def metric_derivative(self):
        """d[..., a, b, c] = partial_a g_bc."""
        self._require_grid()
        return self.grid.gradient_sym(self.components)

    @cached_property
    def christoffel(self):
        """Gamma^l_ij with shape grid + (l, i, j)."""
        if not self.is_grid:
            return np.zeros(self.grid.shape + (self.dim,) * 3)
        return christoffel_from(self.inverse, self.metric_derivative)

    def volume(self):
        if not self.is_grid:
            raise DomainError("model metrics have no chart volume")
        return self.grid.integrate(self.sqrt_det)

    def integrate(self, f):
        """Integral of a scalar field against the Riemannian volume."""
        self._require_grid()
        return self.grid.integrate(np.asarray(f) * self.sqrt_det)

    def to_spec(self):
        if self.kind == "grid":
            spec = {"dim": self.dim, "kind": "grid", "resolution": list(self.resolution)}
            if self.fourier_coeffs is not None:
                spec["fourier_coeffs"] = [
                    {"mode": list(k), "cos": a, "sin": b}
                    for k, (a, b) in self.fourier_coeffs.items()]
            return spec
        if self.kind == "einstein":
            return {"dim": self.dim, "kind": "einstein", "lambda": self.lam}
        return {"dim": self.dim, "kind": self.kind, "kappa": self.kappa}

    def __repr__(self):
        if self.is_grid:
            return f"ChartMetric(dim={self.dim}, grid={self.resolution})"
        return f"ChartMetric(dim={self.dim}, kind={self.kind!r}, lam={self.lam})"


class SymTensorField:
    """Symmetric covariant 2-tensor stored as its upper triangle."""

    __slots__ = ("packed", "chart")

    def __init__(self, components, chart: ChartMetric, packed=False):
        arr = np.asarray(components, dtype=float)
        n = chart.dim
        if packed:
            if arr.shape != chart.grid.shape + (n * (n + 1) // 2,):
                raise ShapeError("packed tensor has wrong shape", shape=arr.shape)
            self.packed = arr.copy()
        else:
            if arr.shape != chart.grid.shape + (n, n):
                raise ShapeError("tensor sampled on a different chart",
                                 shape=arr.shape, expected=chart.grid.shape + (n, n))
            self.packed = pack_sym(arr)
        self.packed.setflags(write=False)
        self.chart = chart

    @property
    def full(self):
        return unpack_sym(self.packed, self.chart.dim)

    def _check(self, other):
        if not isinstance(other, SymTensorField) or not self.chart.same_chart(other.chart):
            raise ShapeError("tensors live on different charts")

    def __add__(self, other):
        self._check(other)
        return SymTensorField(self.packed + other.packed, self.chart, packed=True)

    def __sub__(self, other):
        self._check(other)
        return SymTensorField(self.packed - other.packed, self.chart, packed=True)

    def __neg__(self):
        return SymTensorField(-self.packed, self.chart, packed=True)

    def __mul__(self, c):
        c = np.asarray(c, float)
        if c.ndim:
            c = c[..., None]
        return SymTensorField(self.packed * c, self.chart, packed=True)

    __rmul__ = __mul__

    def norm_max(self):
        return float(np.max(np.abs(self.packed))) if self.packed.size else 0.0

    @classmethod
    def from_metric(cls, m):
        return cls(m.components, m)

    @classmethod
    def zeros(cls, m):
        n = m.dim
        return cls(np.zeros(m.grid.shape + (n * (n + 1) // 2,)), m, packed=True)


def _resolution(dim, resolution):
    if np.isscalar(resolution):
        return (int(resolution),) * dim
    res = tuple(int(r) for r in resolution)
    if len(res) != dim:
        raise ShapeError("resolution rank must equal dimension", resolution=res, dim=dim)
    return res


def _band_modes(res, max_mode):
    limits = []
    for size in res:
        cap = size // 3 if size > 1 else 0
        limits.append(cap if max_mode is None else min(cap, max_mode))
    ranges = [range(-c, c + 1) for c in limits]
    modes = []
    for mode in np.ndindex(*[len(r) for r in ranges]):
        k = tuple(r[i] for r, i in zip(ranges, mode))
        if any(k) and next(x for x in k if x) > 0:  # one representative per +-k
            modes.append(k)
    return modes


def _synthesize(res, coeffs, value_shape):
    """sum_k A_k cos(k.theta) + B_k sin(k.theta) by one inverse FFT."""
    res = tuple(res)
    size = int(np.prod(res)) if res else 1
    spec = np.zeros(res + tuple(value_shape), dtype=complex)
    for mode, (a, b) in coeffs.items():
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        pos = tuple(int(k) % n for k, n in zip(mode, res))
        neg = tuple(-int(k) % n for k, n in zip(mode, res))
        if pos == neg:
            spec[pos] += size * a
        else:
            spec[pos] += 0.5 * size * (a - 1j * b)
            spec[neg] += 0.5 * size * (a + 1j * b)
    if not res:
        return spec.real.copy()
    axes = tuple(range(len(res)))
    return np.ascontiguousarray(sfft.ifftn(spec, axes=axes, workers=_workers()).real)


def _random_modes(rng, res, dim, amplitude, max_mode, matrix):
    if max_mode is None:
        max_mode = 2
    modes = _band_modes(res, max_mode)
    coeffs = {}
    for k in modes:
        decay = amplitude * math.exp(-0.5 * sum(x * x for x in k))
        if matrix:
            a = rng.standard_normal((dim, dim))
            b = rng.standard_normal((dim, dim))
            coeffs[k] = (decay * _sym(a) / dim, decay * _sym(b) / dim)
        else:
            coeffs[k] = decay * rng.standard_normal(2)
    return coeffs


def random_scalar(resolution, seed=0, amplitude=0.2, max_mode=None, mean_zero=True):
    """Band-limited random periodic scalar field on a torus grid."""
    res = tuple(resolution)
    grid = TorusGrid(res)
    rng = np.random.default_rng(seed)
    coeffs = _random_modes(rng, res, len(res), amplitude, max_mode, matrix=False)
    f = _synthesize(grid.shape, coeffs, ())
    if not mean_zero:
        f += amplitude * rng.standard_normal()
    return f


def random_sym_field(m: ChartMetric, seed=0, amplitude=1.0, max_mode=2):
    rng = np.random.default_rng(seed)
    n = m.dim
    comps = np.zeros(m.grid.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            comps[..., i, j] = random_scalar(m.grid.shape, seed=int(rng.integers(1 << 31)),
                                             amplitude=amplitude, max_mode=max_mode,
                                             mean_zero=False)
            comps[..., j, i] = comps[..., i, j]
    return SymTensorField(comps, m)


# ---------------------------------------------------------------------------
# curvature


def christoffel_from(ginv, dg):
    """Gamma^l_ij from the inverse metric and d[..., a, b, c] = partial_a g_bc."""
    lowered = 0.5 * (np.einsum("...ijk->...kij", dg) + np.einsum("...jik->...kij", dg) - dg)
    return np.einsum("...lk,...kij->...lij", ginv, lowered)


def ricci_from(grid: TorusGrid, gamma):
    """Ricci tensor from Christoffel symbols on a grid."""
    nd = grid.dim
    div = sum(grid.diff(gamma[..., l, :, :], l) for l in range(nd))
    trace = np.einsum("...lil->...i", gamma)
    dtrace = grid.gradient(trace)  # [..., j, i] = partial_j Gamma^l_il
    quad = (np.einsum("...llm,...mij->...ij", gamma, gamma)
            - np.einsum("...ljm,...mil->...ij", gamma, gamma))
    return _sym(div - np.swapaxes(dtrace, -1, -2) + quad)


def riemann_from(grid: TorusGrid, g, gamma):
    """Rm[a, b, c, d] = <R(d_a, d_b) d_c, d_d> with R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]."""
    dgam = grid.gradient(gamma)  # [..., i, l, j, k] = partial_i Gamma^l_jk
    up = (np.einsum("...iljk->...ijkl", dgam) - np.einsum("...jlik->...ijkl", dgam)
          + np.einsum("...mjk,...lim->...ijkl", gamma, gamma)
          - np.einsum("...mik,...ljm->...ijkl", gamma, gamma))
    return np.einsum("...ijkl,...ld->...ijkd", up, g)


@dataclass(frozen=True)
class CurvaturePack:
    ricci: np.ndarray
    scal: np.ndarray
    schouten: np.ndarray
    bach: Optional[np.ndarray]
    weyl_norm_sq: Optional[np.ndarray]
    riemann: Optional[np.ndarray]


def schouten_from(ricci, scal, g, n):
    if n == 2:
        # only the trace part is meaningful in two dimensions
        return 0.25 * scal[..., None, None] * g
    return (ricci - (scal / (2 * (n - 1)))[..., None, None] * g) / (n - 2)


def weyl_norm_sq_from(riemann, ricci, scal, ginv, n):
    if n < 3:
        return np.zeros(scal.shape)
    rm_sq = np.einsum("...abcd,...ai,...bj,...ck,...dl,...ijkl->...",
                      riemann, ginv, ginv, ginv, ginv, riemann, optimize=True)
    ric_sq = np.einsum("...ab,...ai,...bj,...ij->...", ricci, ginv, ginv, ricci)
    return rm_sq - 4.0 / (n - 2) * ric_sq + 2.0 / ((n - 1) * (n - 2)) * scal ** 2


def weyl_from(riemann, schouten, g):
    """Weyl tensor in the Rm[a, b, c, d] ordering used by ``riemann_from``."""
    kn = (np.einsum("...ad,...bc->...abcd", schouten, g)
          + np.einsum("...bc,...ad->...abcd", schouten, g)
          - np.einsum("...ac,...bd->...abcd", schouten, g)
          - np.einsum("...bd,...ac->...abcd", schouten, g))
    return riemann - kn


def bach_from(m: ChartMetric, schouten, weyl):
    """B_ij = nabla^k nabla_k P_ij - nabla^k nabla_j P_ik + P^kl W_kijl (Bach tensor)."""
    grid = m.grid
    gam = m.christoffel
    ginv = m.inverse
    dp = covariant_derivative_sym(grid, gam, schouten)  # [..., k, i, j] = nabla_k P_ij
    ddp = covariant_derivative_3(grid, gam, dp)         # [..., l, k, i, j]
    rough = np.einsum("...ab,...abij->...ij", ginv, ddp)
    cross = np.einsum("...ab,...ajib->...ij", ginv, ddp)  # nabla^k nabla_j P_ik
    p_up = np.einsum("...ka,...lb,...ab->...kl", ginv, ginv, schouten)
    # Rm[a,b,c,d] = <R(a,b)c,d>, so W_kijl in the index order below
    wterm = np.einsum("...kl,...kijl->...ij", p_up, weyl)
    return _sym(rough - cross + wterm)


def covariant_derivative_sym(grid, gamma, t):
    """nabla_k t_ij -> [..., k, i, j]."""
    d = grid.gradient(t)
    return (d - np.einsum("...mki,...mj->...kij", gamma, t)
            - np.einsum("...mkj,...im->...kij", gamma, t))


def covariant_derivative_3(grid, gamma, t):
    """nabla_l t_kij for a 3-tensor -> [..., l, k, i, j]."""
    d = grid.gradient(t)
    return (d - np.einsum("...mlk,...mij->...lkij", gamma, t)
            - np.einsum("...mli,...kmj->...lkij", gamma, t)
            - np.einsum("...mlj,...kim->...lkij", gamma, t))


def curvature_pack(m: ChartMetric, with_riemann=True) -> CurvaturePack:
    """Ricci, scalar, Schouten and (n >= 4) Bach tensors of a metric."""
    n = m.dim
    g = m.components
    if not m.is_grid:
        if m.kind == "warped":
            raise DomainError("use warped_models.warped_curvature for warped metrics")
        lam = m.lam
        ricci = lam * (n - 1) * g
        scal = np.asarray(lam * n * (n - 1))
        schouten = schouten_from(ricci, scal, g, n)
        riemann = weyl = None
        if m.kind == "constant_curvature":
            riemann = m.kappa * (np.einsum("...ad,...bc->...abcd", g, g)
                                 - np.einsum("...ac,...bd->...abcd", g, g))
            weyl = np.asarray(0.0)
        bach = np.zeros_like(g) if n >= 4 else None  # Einstein metrics are Bach flat
        return CurvaturePack(ricci, scal, schouten, bach, weyl, riemann)
    _check_band_limit(m)
    ginv = m.inverse
    gam = m.christoffel
    ricci = ricci_from(m.grid, gam)
    scal = np.einsum("...ij,...ij->...", ginv, ricci)
    schouten = schouten_from(ricci, scal, g, n)
    riemann = weyl_sq = bach = None
    if with_riemann or n >= 4:
        riemann = riemann_from(m.grid, g, gam)
        weyl_sq = weyl_norm_sq_from(riemann, ricci, scal, ginv, n)
        if n >= 4:
            bach = bach_from(m, schouten, weyl_from(riemann, schouten, g))
        if not with_riemann:
            riemann = None
    return CurvaturePack(ricci, scal, schouten, bach, weyl_sq, riemann)


def ricci_scalar(m: ChartMetric):
    """Scalar curvature alone (cheaper than the full pack)."""
    if not m.is_grid:
        return np.asarray(m.lam * m.dim * (m.dim - 1))
    ric = ricci_from(m.grid, m.christoffel)
    return np.einsum("...ij,...ij->...", m.inverse, ric)


def _check_band_limit(m: ChartMetric, rel_tol=1e-4):
    """Flag metrics whose spectrum reaches the top third of the grid."""
    if m.fourier_coeffs is not None:
        return
    comp = m.components - np.mean(m.components, axis=tuple(range(m.dim)))
    scale = float(np.max(np.abs(m.components)))
    for axis, size in enumerate(m.grid.shape):
        if size < 4:
            continue
        spec = np.abs(np.fft.fft(comp, axis=axis))
        k = np.abs(m.grid.wavenumbers(axis))
        top = spec[(slice(None),) * axis + (k > size // 3,)]
        if top.size and float(np.max(top)) / size > rel_tol * scale:
            raise AliasingError("metric is under-resolved for its band limit",
                                axis=axis, tail=float(np.max(top)) / size)


# ---------------------------------------------------------------------------
# algebraic and first-order operators (grid kinds)


def _check_field(m, t):
    if isinstance(t, SymTensorField):
        if not m.same_chart(t.chart):
            raise ShapeError("tensor sampled on a different chart")
        return t.full
    arr = np.asarray(t, float)
    if arr.shape != m.grid.shape + (m.dim, m.dim):
        raise ShapeError("tensor sampled on a different chart", shape=arr.shape)
    return arr


def trace(m, t):
    return np.sum(m.inverse * _check_field(m, t), axis=(-1, -2))


def inner(m, t, s):
    gi = m.inverse
    return np.einsum("...ia,...jb,...ij,...ab->...", gi, gi, _check_field(m, t), _check_field(m, s))


def inner_forms(m, a, b):
    return np.einsum("...ij,...i,...j->...", m.inverse, a, b)


def raise_index(m, a):
    return np.einsum("...ij,...j->...i", m.inverse, a)


def lower_index(m, v):
    return np.einsum("...ij,...j->...i", m.components, v)


def trace_free(m, t):
    t = _check_field(m, t)
    return t - (trace(m, t) / m.dim)[..., None, None] * m.components


def l2_pairing(m, t, s):
    return m.integrate(inner(m, t, s))


def delta_star(m, xi):
    """Symmetrized covariant derivative of a 1-form: 1/2 L_{xi#} g."""
    m._require_grid()
    n = m.dim
    d = m.grid.gradient(xi)  # [..., i, j] = partial_i xi_j
    gam = m.christoffel.reshape(m.grid.shape + (n, n * n))
    corr = np.matmul(xi[..., None, :], gam).reshape(m.grid.shape + (n, n))
    return _sym(d) - corr


def divergence(m, t):
    """delta(t), the exact discrete adjoint of ``delta_star`` (= -nabla^i t_ij)."""
    m._require_grid()
    t = _check_field(m, t)
    n = m.dim
    gi = m.inverse
    sq = m.sqrt_det
    up = gi @ t @ gi
    flux = sq[..., None, None] * up
    div = sum(m.grid.diff(flux[..., i, :], i) for i in range(n))
    gam = m.christoffel.reshape(m.grid.shape + (n, n * n))
    contr = np.matmul(gam, up.reshape(m.grid.shape + (n * n, 1)))[..., 0]
    vec = -div / sq[..., None] - contr
    return np.matmul(m.components, vec[..., None])[..., 0]


def gradient(m, f):
    m._require_grid()
    return m.grid.gradient(np.asarray(f, float))


def codifferential(m, a):
    """d*a = -(1/sqrt g) partial_i (sqrt g a^i), the adjoint of ``gradient``."""
    m._require_grid()
    sq = m.sqrt_det
    flux = sq[..., None] * raise_index(m, a)
    return -sum(m.grid.diff(flux[..., i], i) for i in range(m.dim)) / sq


def weighted_laplacian(m, coeff, f):
    """d*(coeff df) for a symmetric field ``coeff`` acting on 1-forms (contravariant)."""
    m._require_grid()
    sq = m.sqrt_det
    df = m.grid.gradient(np.asarray(f, float))
    flux = sq[..., None] * np.einsum("...ij,...j->...i", coeff, df)
    return -sum(m.grid.diff(flux[..., i], i) for i in range(m.dim)) / sq


def laplacian(m, f):
    """Positive Laplacian d*d f."""
    return codifferential(m, gradient(m, f))


def hessian(m, f):
    """Covariant Hessian nabla^2 f."""
    m._require_grid()
    df = m.grid.gradient(np.asarray(f, float))
    return _sym(m.grid.gradient(df)) - np.einsum("...lij,...l->...ij", m.christoffel, df)


def lie_derivative(m, vector):
    """L_X g for a vector field X (components X^i)."""
    return 2.0 * delta_star(m, lower_index(m, vector))


class TensorCalculus:
    """Operators bound to one chart; mirrors the free functions above."""

    def __init__(self, m):
        self.m = m

    def trace(self, t):
        return trace(self.m, t)

    def divergence(self, t):
        return divergence(self.m, t)

    def inner(self, t, s):
        return inner(self.m, t, s)

    def delta_star(self, xi):
        return SymTensorField(delta_star(self.m, xi), self.m)

    def lie(self, vector):
        return SymTensorField(lie_derivative(self.m, vector), self.m)

    def l2_pairing(self, t, s):
        return l2_pairing(self.m, t, s)


def tensor_calculus(m, t):
    """Trace and divergence of ``t`` plus operators bound to ``m``."""
    arr = _check_field(m, t)
    ops = TensorCalculus(m)
    return {
        "trace": trace(m, arr),
        "divergence": divergence(m, arr) if m.is_grid else np.zeros(m.grid.shape + (m.dim,)),
        "inner": ops.inner,
        "delta_star": ops.delta_star,
        "lie": ops.lie,
        "l2_pairing": ops.l2_pairing,
    }


# ---------------------------------------------------------------------------
# trace-free / divergence-free projection


def _flat_ck_preconditioner(grid: TorusGrid, n):
    """Fourier inverse of the flat conformal-Killing Laplacian.

    Uses the effective (Nyquist-free) wavenumbers of ``TorusGrid.diff``; the
    symbol is singular exactly on the modes whose effective wavenumber
    vanishes, and those are left to the coarse solve.
    """
    ks = np.meshgrid(*[grid._ik[a].imag for a in range(n)], indexing="ij")
    kvec = np.stack(ks, axis=-1)
    ksq = np.sum(kvec ** 2, axis=-1)
    a = 0.5 * ksq
    b = 0.5 - 1.0 / n
    zero = ksq == 0
    safe_a = np.where(zero, 1.0, a)
    denom = np.where(zero, 1.0, a + b * ksq)
    inv = (np.eye(n) - (b / denom)[..., None, None] * np.einsum("...i,...j->...ij", kvec, kvec))
    inv = inv / safe_a[..., None, None]
    inv[zero] = 0.0
    axes = tuple(range(n))

    def apply(r):
        rh = sfft.fftn(r, axes=axes, workers=_workers())
        rh = np.matmul(inv, rh[..., None])[..., 0]
        return sfft.ifftn(rh, axes=axes, workers=_workers()).real

    return apply


def _flat_kernel_patterns(grid: TorusGrid):
    """Sign patterns with zero effective wavenumber (constants and Nyquist products).

    Returns the patterns and their axis subsets encoded as bit masks, so the
    product of two patterns is the pattern of the xor of the masks.
    """
    even_axes = [a for a, size in enumerate(grid.shape) if size % 2 == 0 and size > 1]
    patterns, masks = [], []
    for mask in range(1 << len(even_axes)):
        p = np.ones(grid.shape)
        for bit, a in enumerate(even_axes):
            if mask >> bit & 1:
                shape = [1] * grid.dim
                shape[a] = grid.shape[a]
                p = p * ((-1.0) ** np.arange(grid.shape[a])).reshape(shape)
        patterns.append(p)
        masks.append(mask)
    return patterns, masks


def _coarse_solver(m: ChartMetric):
    """Exact Galerkin solve on the kernel of the flat preconditioner.

    On those patterns every spectral derivative vanishes, so the conformal
    Killing operator acts by multiplication with the Christoffel symbols and
    the Galerkin matrix is a sum of pointwise products.
    """
    n = m.dim
    patterns, masks = _flat_kernel_patterns(m.grid)
    gam = m.christoffel
    sq = m.sqrt_det
    gi = m.inverse
    # D(e_c) = -TF(Gamma^c_ij) for the constant covector e_c
    dcols = [-trace_free(m, gam[..., c, :, :]) for c in range(n)]
    raised = [gi @ d @ gi for d in dcols]
    pair = np.empty(m.grid.shape + (n, n))
    for c in range(n):
        for e in range(n):
            pair[..., c, e] = sq * np.sum(raised[c] * dcols[e], axis=(-1, -2))
    sums = {mask: np.tensordot(p, pair, axes=(list(range(m.grid.dim)),) * 2)
            for p, mask in zip(patterns, masks)}
    npat = len(patterns)
    gram = np.empty((npat * n, npat * n))
    for i, mi in enumerate(masks):
        for j, mj in enumerate(masks):
            gram[i * n:(i + 1) * n, j * n:(j + 1) * n] = sums[mi ^ mj]
    gram = 0.5 * (gram + gram.T)
    w, vecs = np.linalg.eigh(gram)
    keep = w > 1e-12 * max(1.0, float(np.max(np.abs(w))))
    inv = (vecs[:, keep] / w[keep]) @ vecs[:, keep].T
    pstack = np.stack(patterns, axis=0)
    gaxes = list(range(m.grid.dim))

    def apply(r):
        coef = np.tensordot(pstack, r, axes=([a + 1 for a in gaxes], gaxes)).reshape(-1)
        z = (inv @ coef).reshape(npat, n)
        return np.moveaxis(np.tensordot(z, pstack, axes=(0, 0)), 0, -1)

    return apply


def conformal_killing_solve(m: ChartMetric, rhs, tol=1e-12, maxiter=2000, scale=None):
    """Solve D*D sigma = rhs with D = trace-free part of delta_star.

    The system is made Euclidean-symmetric by the weight sqrt(g) g^{-1} and
    solved by preconditioned conjugate gradients: flat Fourier inverse plus an
    exact coarse solve on the flat kernel.
    """
    n = m.dim
    shape = m.grid.shape + (n,)
    sq = m.sqrt_det
    gi = m.inverse

    def weight(a):
        return sq[..., None] * np.matmul(gi, a[..., None])[..., 0]

    def op(a):
        return divergence(m, trace_free(m, delta_star(m, a)))

    size = int(np.prod(shape))

    def matvec(v):
        return weight(op(v.reshape(shape))).ravel()

    lin = spla.LinearOperator((size, size), dtype=float, matvec=matvec)
    pre = _flat_ck_preconditioner(m.grid, n)
    coarse = _coarse_solver(m)
    prec = spla.LinearOperator((size, size), dtype=float,
                               matvec=lambda v: (pre(v.reshape(shape))
                                                 + coarse(v.reshape(shape))).ravel())
    b = weight(np.asarray(rhs, float)).ravel()
    bnorm = float(np.linalg.norm(b))
    floor = tol * (bnorm if scale is None else max(bnorm, scale * math.sqrt(size)))
    if bnorm <= floor:
        return np.zeros(shape), 0
    count = [0]

    def cb(_):
        count[0] += 1

    sol, info = spla.cg(lin, b, rtol=0.0, atol=floor, maxiter=maxiter, M=prec, callback=cb)
    if info != 0:
        smallest = _smallest_eigenvalue(lin, size)
        raise SingularityError("conformal Killing solve did not converge",
                               iterations=count[0], smallest_singular_value=smallest)
    return sol.reshape(shape), count[0]


def _smallest_eigenvalue(lin, size):
    try:
        vals = spla.eigsh(lin, k=1, which="SA", maxiter=200, tol=1e-6,
                          return_eigenvectors=False)
        return float(abs(vals[0]))
    except Exception:  # eigsh itself may stall on a near-singular operator
        return float("nan")


def constraint_part(m: ChartMetric, trace_target, div_target, tol=1e-12):
    """Tensor in the range of the adjoint constraint map with prescribed trace and divergence."""
    base = (np.asarray(trace_target, float) / m.dim)[..., None, None] * m.components
    residual = np.asarray(div_target, float) - divergence(m, base)
    scale = max(1.0, float(np.max(np.abs(base))), float(np.max(np.abs(div_target))))
    sigma, _ = conformal_killing_solve(m, residual, tol=tol, scale=scale)
    return base + trace_free(m, delta_star(m, sigma))


def tt_project(m: ChartMetric, k, tol=1e-12):
    """Orthogonal projection onto trace-free, divergence-free tensors."""
    arr = _check_field(m, k)
    m._require_grid()
    tf = trace_free(m, arr)
    scale = max(1.0, float(np.max(np.abs(arr))))
    sigma, _ = conformal_killing_solve(m, divergence(m, tf), tol=tol, scale=scale)
    out = tf - trace_free(m, delta_star(m, sigma))
    return SymTensorField(out, m)


def tt_residuals(m, k):
    arr = _check_field(m, k)
    scale = max(1.0, float(np.max(np.abs(arr))))
    return (float(np.max(np.abs(trace(m, arr)))) / scale,
            float(np.max(np.abs(divergence(m, arr)))) / scale)


# ---------------------------------------------------------------------------
# startup check of the divergence sign


def _convention_selftest():
    grid = TorusGrid((8, 8))
    x, y = grid.mesh()
    comp = np.zeros((8, 8, 2, 2))
    comp[..., 0, 0] = 1.0 + 0.1 * np.cos(x)
    comp[..., 1, 1] = 1.0 + 0.1 * np.sin(y)
    comp[..., 0, 1] = comp[..., 1, 0] = 0.05 * np.cos(x + y)
    m = ChartMetric(2, "grid", comp)
    t = np.zeros((8, 8, 2, 2))
    t[..., 0, 1] = t[..., 1, 0] = np.sin(y)
    t[..., 0, 0] = np.cos(x)
    xi = np.stack([np.sin(x + y), np.cos(y)], axis=-1)
    lhs = l2_pairing(m, delta_star(m, xi), t)
    rhs = m.integrate(inner_forms(m, xi, divergence(m, t)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs)), "divergence sign convention broken"


_convention_selftest()
