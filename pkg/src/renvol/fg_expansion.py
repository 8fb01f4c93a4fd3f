"""Order-by-order solution of the Fefferman-Graham recursion.

The bulk metric is g = x^{-2}(dx^2 + h_x).  With D = x d/dx and
B = h^{-1} D h the Einstein condition Ric(g) = -n g splits into

* tangential:  D^2h - nDh - Tr(B) h - Dh h^{-1} Dh + 1/2 Tr(B) Dh - 2x^2 Ric(h) = 0
* trace:       D Tr B - 2 Tr B + 1/2 Tr(B^2) = 0
* divergence:  delta_h(Dh) + d Tr B = 0

At x^j the tangential equation is linear in the new coefficient with symbol
X -> j(j-n) X - j Tr(X) h0, so orders j != n are determined outright.  At
j = n the trace-free part is free (the Neumann datum) and the trace-free
defect is absorbed by the log coefficient (the obstruction) when n is even.

Traces of coefficients come from the trace equation whenever it is
non-degenerate (j > 2): that equation is pointwise algebraic, so trace
identities among the coefficients hold to rounding, while the tangential
trace is kept as a residual that measures discretization error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import chart_geometry as cg
from .chart_geometry import ChartMetric, SymTensorField
from .errors import ArgumentError, ConstraintError, DomainError
from .xseries import (
    XSeries,
    scalar_times,
    series_inv,
    series_mul,
    series_trace,
    sqrt_det_series,
)

LOG_ACTIVATION = 1e-10
NEUMANN_TOL = 1e-6


# ---------------------------------------------------------------------------
# pointwise helpers


def _tr(h0inv, t):
    return np.sum(h0inv * t, axis=(-1, -2))


def _tf(h0, h0inv, t):
    n = h0.shape[-1]
    return t - (_tr(h0inv, t) / n)[..., None, None] * h0


def _mat(a, b):
    return np.matmul(a, b)


def _bcast(c, shape):
    return np.broadcast_to(c, shape)


# ---------------------------------------------------------------------------
# curvature of a series metric


def _perm_lowered(d):
    """Gamma_kij from d[..., a, b, c] = partial_a h_bc."""
    return 0.5 * (np.einsum("...ijk->...kij", d) + np.einsum("...jik->...kij", d) - d)


def _raise_first(ginv, low):
    n = ginv.shape[-1]
    lead = low.shape[:-3]
    return np.matmul(ginv, low.reshape(lead + (n, n * n))).reshape(lead + (n, n, n))


def _quad(a, b):
    """Gamma^l_lm B^m_ij - A^l_jm B^m_il with A, B Christoffel-shaped."""
    n = a.shape[-1]
    lead = np.broadcast_shapes(a.shape[:-3], b.shape[:-3])
    v = np.einsum("...llm->...m", a)
    t1 = np.matmul(v[..., None, :], b.reshape(b.shape[:-3] + (n, n * n))).reshape(lead + (n, n))
    a2 = np.transpose(a, tuple(range(a.ndim - 3)) + (a.ndim - 2, a.ndim - 3, a.ndim - 1))
    a2 = a2.reshape(a.shape[:-3] + (n, n * n))          # [j, (l, m)]
    b2 = np.transpose(b, tuple(range(b.ndim - 3)) + (b.ndim - 1, b.ndim - 3, b.ndim - 2))
    b2 = b2.reshape(b.shape[:-3] + (n * n, n))          # [(l, m), i]
    t2 = np.swapaxes(np.matmul(a2, b2), -1, -2)
    return t1 - t2


class _SeriesGeometry:
    """Christoffel and Ricci series of h_x on a grid chart."""

    def __init__(self, grid, h: XSeries, order):
        self.grid = grid
        self.n = h.shape[-1]
        self.h = h.truncate(order)
        self.hinv = series_inv(self.h)
        nd = grid.dim
        dh = self.h.map(grid.gradient_sym, shape=self.h.shape[:nd] + (self.n,) * 3)
        low = dh.map(_perm_lowered)
        self.gamma = series_mul(self.hinv, low, _raise_first)

    def ricci(self):
        grid = self.grid
        nd = grid.dim
        gam = self.gamma
        div = gam.map(lambda c: sum(grid.diff(c[..., l, :, :], l) for l in range(nd)),
                      shape=gam.shape[:-1])
        tr = gam.map(lambda c: np.einsum("...lil->...i", c), shape=gam.shape[:-2])
        dtr = tr.map(lambda c: np.swapaxes(grid.gradient(c), -1, -2), shape=gam.shape[:-1])
        quad = series_mul(gam, gam, _quad)
        ric = div - dtr + quad
        return ric.map(cg._sym)

    def divergence(self, k: XSeries):
        """delta_h(k)_m = -h^{ab}(d_a k_bm - Gamma^c_ab k_cm - Gamma^c_am k_bc)."""
        grid = self.grid
        n = self.n
        dk = k.map(grid.gradient_sym, shape=k.shape[:-2] + (n, n, n))
        term1 = series_mul(self.hinv, dk, lambda a, d: np.einsum("...ab,...abm->...m", a, d))
        contracted = series_mul(self.hinv, self.gamma,
                                lambda a, g: np.einsum("...ab,...cab->...c", a, g))
        term2 = series_mul(contracted, k, lambda v, t: np.matmul(v[..., None, :], t)[..., 0, :])
        mixed = series_mul(self.hinv, k, np.matmul)  # k^a_c
        term3 = series_mul(self.gamma, mixed, lambda g, t: np.einsum("...cam,...ac->...m", g, t))
        return -(term1 - term2 - term3)


# ---------------------------------------------------------------------------
# residual series


@dataclass
class _Residuals:
    tangential: XSeries
    trace: XSeries


def _einstein_residuals(h: XSeries, ricci: Optional[XSeries], n, order):
    h = h.truncate(order)
    dh = h.euler()
    d2h = dh.euler()
    hinv = series_inv(h)
    b = series_mul(hinv, dh, np.matmul)
    trb = series_trace(b)
    quad = series_mul(series_mul(dh, hinv, np.matmul), dh, np.matmul)
    tang = d2h - dh.scale(n) - scalar_times(trb, h) - quad + scalar_times(trb, dh).scale(0.5)
    if ricci is not None:
        tang = tang - ricci.shift(2).truncate(order).scale(2.0)
    tr = trb.euler() - trb.scale(2.0) + series_trace(series_mul(b, b, np.matmul)).scale(0.5)
    return _Residuals(tang, tr)


def _model_ricci(h: XSeries, h0, lam, n, order):
    """Ricci series on a homogeneous Einstein model: constant while h_x stays proportional to h0."""
    h0inv = np.linalg.inv(h0)
    for mapping in (h.terms, h.logs):
        for p, c in mapping.items():
            if p <= order and np.max(np.abs(_tf(h0, h0inv, c))) > 1e-13 * max(1.0, np.max(np.abs(c))):
                raise DomainError("model Ricci needs h_x proportional to h0 below this order",
                                  power=p)
    return XSeries(n, order, {0: lam * (n - 1) * h0}, shape=h.shape)


# ---------------------------------------------------------------------------
# record


@dataclass
class FGExpansion:
    """Solved expansion of one Poincare-Einstein end."""

    h0: ChartMetric
    coeffs: XSeries
    neumann: Optional[np.ndarray]
    obstruction: np.ndarray
    volume: XSeries
    residuals: dict = field(default_factory=dict)
    trace_target: Optional[np.ndarray] = None
    div_target: Optional[np.ndarray] = None
    neumann_default: bool = True

    @property
    def n(self):
        return self.h0.dim

    @property
    def order(self):
        return self.coeffs.order

    def coefficient(self, j):
        """h_j as an array (the non-log x^j coefficient)."""
        return self.coeffs.coeff(j)

    def endomorphism(self, j):
        """H_j = h0^{-1} h_j."""
        return np.matmul(self.h0.inverse, self.coefficient(j))

    @property
    def obstruction_endomorphism(self):
        return np.matmul(self.h0.inverse, self.obstruction)

    def tensor(self, j):
        return SymTensorField(self.coefficient(j), self.h0)

    def to_dict(self):
        data = {
            "n": self.n,
            "order": self.order,
            "h0": self.h0.to_spec(),
            "grid_shape": list(self.h0.grid.shape),
            "coefficients": {str(p): c.ravel().tolist() for p, c in self.coeffs.terms.items()},
            "log_coefficients": {str(p): c.ravel().tolist() for p, c in self.coeffs.logs.items()},
            "volume": {str(p): np.ravel(c).tolist() for p, c in self.volume.terms.items()},
            "obstruction_max": float(np.max(np.abs(self.obstruction))) if self.obstruction.size else 0.0,
            "neumann_default": self.neumann_default,
            "residuals": _jsonable(self.residuals),
        }
        return data

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# solver


def _as_array(t, h0: ChartMetric):
    if t is None:
        return None
    if isinstance(t, SymTensorField):
        if not h0.same_chart(t.chart):
            raise ArgumentError("Neumann datum sampled on a different chart")
        return t.full
    arr = np.asarray(t, float)
    if arr.shape != h0.components.shape:
        raise ArgumentError("Neumann datum has the wrong shape", shape=arr.shape)
    return cg._sym(arr)


def solve_fg(h0: ChartMetric, neumann=None, order=None, cg_tol=1e-13,
             diagnostics=True) -> FGExpansion:
    """Solve the recursion for h_x through x^order.

    Parameters
    ----------
    h0 : ChartMetric
        Boundary metric, grid or Einstein/constant-curvature model.
    neumann : SymTensorField or array, optional
        The x^n coefficient.  Its trace and divergence must match the values
        forced by lower orders; when omitted the pure-constraint tensor is used.
    order : int, optional
        Truncation order, default n + 2.
    diagnostics : bool
        Re-evaluate the Einstein residual of the final series (costs about
        one extra order of work on large grids).
    """
    n = h0.dim
    if order is None:
        order = n + 2
    if order < n:
        raise ArgumentError("order must be at least n", order=order, n=n)
    g0 = np.asarray(h0.components)
    g0inv = np.asarray(h0.inverse)
    shape = g0.shape
    grid_kind = h0.is_grid
    if not grid_kind and h0.kind not in ("einstein", "constant_curvature"):
        raise DomainError("solve_fg needs a grid or Einstein model metric", kind=h0.kind)
    user_neumann = _as_array(neumann, h0)
    h = XSeries(n, order, {0: g0}, shape=shape)
    obstruction = np.zeros(shape)
    trace_target = div_target = None
    neumann_used = None
    consistency = {}

    geometry_cache = {}
    ricci_cache = {}

    def _inputs(series, upto):
        last = max([p for p in series.powers() if p <= upto], default=0)
        ids = [series.terms.get(p) for p in range(last + 1)]
        ids += [series.logs.get(p) for p in range(last + 1)]
        return last, ids

    def _lookup(cache, series, upto, build):
        # results through x^upto only see coefficients up to upto
        last, inputs = _inputs(series, upto)
        hit = cache.get(last)
        if hit is not None and hit[1] >= upto and all(a is b for a, b in zip(hit[0], inputs)):
            return hit[2]
        value = build()
        cache[last] = (inputs, upto, value)
        return value

    def geometry_of(series, upto):
        return _lookup(geometry_cache, series, upto,
                       lambda: _SeriesGeometry(h0.grid, series, upto))

    def ricci_of(series, upto):
        if upto < 0:
            return None
        if not grid_kind:
            return _model_ricci(series, g0, h0.lam, n, upto)
        ric = _lookup(ricci_cache, series, upto, lambda: geometry_of(series, upto).ricci())
        return ric.truncate(upto)

    for j in range(1, order + 1):
        if j % 2 == 1 and (j < n or all(p % 2 == 0 for p in h.powers())):
            continue  # odd orders have no source while every power present is even
        res = _einstein_residuals(h, ricci_of(h, j - 2), n, j)
        r = res.tangential.coeff(j)
        r_log = res.tangential.log_at(j)
        t = res.trace.coeff(j)
        t_log = res.trace.log_at(j)
        tr_r = _tr(g0inv, r)
        if j != n:
            # log coefficient (only above n)
            y = np.zeros(shape)
            tr_y = np.zeros(shape[:-2])
            if j > n:
                if j > 2:
                    tr_y = -t_log / (j * (j - 2))
                y = -_tf(g0, g0inv, r_log) / (j * (j - n)) + (tr_y / n)[..., None, None] * g0
            if j > 2:
                tr_x = -(t + (2 * j - 2) * tr_y) / (j * (j - 2))
                consistency[j] = float(np.max(np.abs(tr_r - j * (2 * n - j) * tr_x
                                                     + (2 * j - 2 * n) * tr_y)))  # tangential trace
            else:
                tr_x = tr_r / (j * (2 * n - j))
            x_tf = -(_tf(g0, g0inv, r) + (2 * j - n) * _tf(g0, g0inv, y)) / (j * (j - n))
            h = h.set_coeff(j, x_tf + (tr_x / n)[..., None, None] * g0)
            if j > n and np.max(np.abs(y)) > 0:
                h = h.set_log(j, y)
            continue
        # j == n: obstruction, trace target, Neumann datum
        defect = _tf(g0, g0inv, r)
        if n % 2 == 0 and n > 2 and np.max(np.abs(defect)) > LOG_ACTIVATION:
            obstruction = defect / (-n)
        elif np.max(np.abs(defect)) > LOG_ACTIVATION:
            # n = 2: trace-free Ricci vanishes, so this is aliasing, not a log term
            consistency["odd_defect" if n % 2 else "surface_defect"] = float(np.max(np.abs(defect)))
        if n > 2:
            tr_x = -t / (n * (n - 2))
            consistency[j] = float(np.max(np.abs(tr_r - n * n * tr_x)))
        else:
            tr_x = tr_r / (n * n)
            consistency[j] = float(np.max(np.abs(t)))
        trace_target = tr_x
        base = (tr_x / n)[..., None, None] * g0
        trial = h.set_coeff(n, base)
        if np.max(np.abs(obstruction)) > 0:
            trial = trial.set_log(n, obstruction)
        if grid_kind:
            div_res = _divergence_residual(h0, trial, n, geometry_of(trial, n))
            correction_div = -div_res / n
            div_target = cg.divergence(h0, base) + correction_div
        else:
            div_target = np.zeros(shape[:-1])
        if user_neumann is None:
            if grid_kind:
                tt_free = cg.constraint_part(h0, tr_x, div_target, tol=cg_tol)
            else:
                tt_free = base
            neumann_used = tt_free
        else:
            tr_err = float(np.max(np.abs(_tr(g0inv, user_neumann) - tr_x)))
            div_err = (float(np.max(np.abs(cg.divergence(h0, user_neumann) - div_target)))
                       if grid_kind else 0.0)
            if tr_err > NEUMANN_TOL or div_err > NEUMANN_TOL:
                raise ConstraintError("Neumann datum violates the constraints",
                                      trace_residual=tr_err, divergence_residual=div_err)
            neumann_used = user_neumann
        h = trial.set_coeff(n, neumann_used)

    volume = sqrt_det_series(h, g0)
    fg = FGExpansion(h0=h0, coeffs=h, neumann=neumann_used, obstruction=obstruction,
                     volume=volume, trace_target=trace_target, div_target=div_target,
                     neumann_default=user_neumann is None)
    if diagnostics:
        fg.residuals = _final_residuals(fg, consistency, ricci_of,
                                        geometry_of if grid_kind else None)
    else:
        fg.residuals = {"tangential_trace_consistency": {str(k): v for k, v in consistency.items()}}
    return fg


def _divergence_residual(h0: ChartMetric, h: XSeries, n, geo=None):
    """Order-n coefficient of delta_h(Dh) + d Tr B."""
    if geo is None:
        geo = _SeriesGeometry(h0.grid, h, n)
    dh = geo.h.euler()
    b = series_mul(geo.hinv, dh, np.matmul)
    trb = series_trace(b)
    dtrb = trb.map(h0.grid.gradient, shape=trb.shape + (n,))
    total = geo.divergence(dh) + dtrb
    return total.coeff(n)


def _final_residuals(fg: FGExpansion, consistency, ricci_of, geometry_of=None):
    n = fg.n
    g0 = fg.h0.components
    g0inv = fg.h0.inverse
    order = fg.order
    residuals = {}
    try:
        ric = ricci_of(fg.coeffs, order - 2)
        res = _einstein_residuals(fg.coeffs, ric, n, order)
        by_order = []
        for j in range(1, order + 1):
            by_order.append({
                "order": j,
                "tangential": float(np.max(np.abs(res.tangential.coeff(j)))),
                "tangential_log": float(np.max(np.abs(res.tangential.log_at(j)))),
                "trace": float(np.max(np.abs(res.trace.coeff(j)))),
                "trace_log": float(np.max(np.abs(res.trace.log_at(j)))),
            })
        residuals["einstein_residual_by_order"] = by_order
    except DomainError as exc:
        residuals["einstein_residual_by_order"] = []
        residuals["einstein_residual_note"] = str(exc)
    k = fg.obstruction
    residuals["obstruction_trace"] = float(np.max(np.abs(_tr(g0inv, k)))) if k.size else 0.0
    if fg.h0.is_grid:
        residuals["obstruction_divergence"] = float(np.max(np.abs(cg.divergence(fg.h0, k))))
        hn = fg.coefficient(n)
        residuals["trace_constraint"] = float(np.max(np.abs(_tr(g0inv, hn) - fg.trace_target)))
        residuals["div_constraint"] = float(np.max(np.abs(cg.divergence(fg.h0, hn) - fg.div_target)))
        try:
            residuals["div_equation_order_n"] = float(np.max(np.abs(
                _divergence_residual(fg.h0, fg.coeffs, n,
                                     geometry_of(fg.coeffs, n) if geometry_of else None))))
        except DomainError:
            pass
    else:
        residuals["obstruction_divergence"] = 0.0
        if fg.trace_target is not None:
            residuals["trace_constraint"] = float(np.max(np.abs(_tr(g0inv, fg.coefficient(n))
                                                            - fg.trace_target)))
        residuals["div_constraint"] = 0.0
    residuals["tangential_trace_consistency"] = {str(k_): v for k_, v in consistency.items()}
    return residuals


# ---------------------------------------------------------------------------
# derived quantities


def volume_coeffs(fg: FGExpansion):
    """[v_0, ..., v_n] as scalar fields (odd entries zero)."""
    return [fg.volume.coeff(j) for j in range(fg.n + 1)]


def elementary_symmetric(h_end, k):
    """sigma_k of the eigenvalues of an endomorphism field via Newton's identities."""
    n = h_end.shape[-1]
    powers = [np.trace(np.linalg.matrix_power(h_end, p), axis1=-2, axis2=-1) for p in range(1, k + 1)]
    e = [np.ones(h_end.shape[:-2])]
    for m in range(1, k + 1):
        acc = np.zeros(h_end.shape[:-2])
        for i in range(1, m + 1):
            acc = acc + ((-1) ** (i - 1)) * e[m - i] * powers[i - 1]
        e.append(acc / m)
    return e[k] if k <= n else np.zeros(h_end.shape[:-2])


def volume_closed_forms(fg: FGExpansion):
    """Closed forms of v_2, v_4 (and v_6 for n >= 6) from H_2 and the Bach tensor."""
    h2 = fg.endomorphism(2)
    out = {2: 0.5 * elementary_symmetric(h2, 1), 4: 0.25 * elementary_symmetric(h2, 2)}
    if fg.n >= 6 and fg.h0.is_grid:
        bach = cg.curvature_pack(fg.h0).bach
        pair = cg.inner(fg.h0, bach, fg.coefficient(2))
        out[6] = 0.125 * elementary_symmetric(h2, 3) + pair / (24 * (fg.n - 4))
    return out


def trace_identities(fg: FGExpansion):
    """Residuals of 4Tr H4 - Tr H2^2 and 6Tr H6 - 4Tr H2H4 + Tr H2^3.

    The second is also returned with the obstruction cross term
    -1/3 Tr(H2 K), which is present when n = 4.
    """
    h2 = fg.endomorphism(2)
    h4 = fg.endomorphism(4)
    tr = lambda a: np.trace(a, axis1=-2, axis2=-1)  # noqa: E731
    first = 4 * tr(h4) - tr(h2 @ h2)
    out = {"first": first}
    if fg.order >= 6:
        h6 = fg.endomorphism(6)
        second = 6 * tr(h6) - 4 * tr(h2 @ h4) + tr(h2 @ h2 @ h2)
        out["second"] = second
        if fg.n == 4:
            out["second_with_log_term"] = second - tr(h2 @ fg.obstruction_endomorphism) / 3.0
        else:
            out["second_with_log_term"] = second
    return out


def inverse_coefficients(fg: FGExpansion):
    """h^{(2j)}: coefficients of the inverse series h_x^{-1} (cotangent metrics)."""
    inv = series_inv(fg.coeffs)
    return inv


def obstruction(h0: ChartMetric):
    """Obstruction tensor (coefficient of x^4 log x) for n = 4."""
    if h0.dim != 4:
        raise ArgumentError("obstruction is implemented for n = 4", n=h0.dim)
    return solve_fg(h0, order=4).obstruction


def linearize_vn_at_einstein(h0: ChartMetric, hdot, eps=1e-4, order=None):
    """Central differences of v_2 and v_n along h0 + s*hdot.

    Returns the pointwise derivatives and the fitted ratio dv_n / dv_2
    (``None`` when dv_2 vanishes identically).
    """
    n = h0.dim
    if h0.is_grid:
        hd = _as_array(hdot, h0)

        def perturbed(s):
            return ChartMetric(n, "grid", h0.components + s * hd)
    else:
        # a model only admits conformal directions hdot = c * h0
        hd = np.asarray(getattr(hdot, "components", hdot), float)
        if hd.ndim == 0:
            factor = float(hd)
        else:
            factor = float(np.trace(hd @ np.linalg.inv(h0.components))) / n
            if np.max(np.abs(hd - factor * h0.components)) > 1e-12 * max(1.0, np.max(np.abs(hd))):
                raise ArgumentError("model metrics only accept directions proportional to h0")

        def perturbed(s):
            return h0.scaled(1.0 + s * factor)

    def coeffs_at(s):
        fg = solve_fg(perturbed(s), order=n if order is None else order)
        return fg.volume.coeff(2), fg.volume.coeff(n)

    p2, pn = coeffs_at(eps)
    m2, mn = coeffs_at(-eps)
    dv2 = (p2 - m2) / (2 * eps)
    dvn = (pn - mn) / (2 * eps)
    scale = float(np.max(np.abs(dv2)))
    ratio = None
    if scale > 1e3 * eps ** 2:
        ratio = float(np.sum(dv2 * dvn) / np.sum(dv2 * dv2))
    return {"dv2": dv2, "dvn": dvn, "ratio": ratio, "dv2_max": scale}
