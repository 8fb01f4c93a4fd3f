"""Functionals on a conformal class.

Geodesic boundary defining functions for e^{2 omega0} h0 (Hamilton-Jacobi
expansion), the shift of the renormalized volume, its Hessian, the
linearization of v_n, the uniformization flows and the anomaly tensors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from . import chart_geometry as cg
from .chart_geometry import ChartMetric, SymTensorField
from .errors import (
    ArgumentError,
    ConvergenceError,
    DomainError,
    EllipticityError,
)
from .fg_expansion import FGExpansion, elementary_symmetric, solve_fg
from .xseries import XSeries, series_inv

# ---------------------------------------------------------------------------
# Hamilton-Jacobi expansion


@dataclass
class ConformalShift:
    omega0: np.ndarray
    omega_coeffs: XSeries
    base_fg: FGExpansion
    hj_residual: list = field(default_factory=list)

    def omega(self, j):
        return self.omega_coeffs.coeff(j)


def _cotangent_coeffs(fg: FGExpansion, upto):
    """h^{(2p)} for 2p <= upto: coefficients of the inverse series of h_x."""
    inv = series_inv(fg.coeffs.truncate(upto))
    return {p: inv.coeff(p) for p in range(0, upto + 1, 2)}


def _pair(cot, a, b):
    return np.einsum("...ij,...i,...j->...", cot, a, b)


def _grad(fg, f):
    m = fg.h0
    if m.is_grid:
        return m.grid.gradient(np.asarray(f, float))
    return np.zeros(np.shape(f) + (m.dim,))


def hj_expand(fg: FGExpansion, omega0) -> ConformalShift:
    """Even coefficients of omega solving |dx/x + d omega|_g = 1 through x^n.

    Expanding ``2 d_x omega = -x((d_x omega)^2 + |d omega|^2_{h_x})`` gives at x^{2i-1}

        4i w_{2i} = -sum_{a+b=i} 4ab w_{2a} w_{2b} - sum_{p+q+r=i-1} h^{(2p)}(dw_{2q}, dw_{2r}).
    """
    n = fg.n
    m = fg.h0
    omega0 = np.asarray(omega0, float)
    if not m.is_grid and omega0.ndim:
        raise ArgumentError("model metrics accept a constant conformal factor only")
    half = n // 2
    cot = _cotangent_coeffs(fg, max(n - 2, 0))
    w = {0: omega0}
    dw = {0: _grad(fg, omega0)}
    for i in range(1, half + 1):
        acc = np.zeros_like(omega0)
        for a in range(1, i):
            acc = acc - 4 * a * (i - a) * w[a] * w[i - a]
        for p in range(0, i):
            for q in range(0, i - p):
                r = i - 1 - p - q
                acc = acc - _pair(cot[2 * p], dw[q], dw[r])
        w[i] = acc / (4 * i)
        dw[i] = _grad(fg, w[i])
    series = XSeries(n, n, {2 * i: c for i, c in w.items()}, shape=omega0.shape)
    shift = ConformalShift(omega0=omega0, omega_coeffs=series, base_fg=fg)
    shift.hj_residual = _hj_residual(w, dw, cot, n)
    return shift


def _hj_residual(w, dw, cot, n):
    """Coefficients of 2x d_x w + x^2((d_x w)^2 + |dw|^2_{h_x}) at odd-free even orders <= n."""
    half = n // 2
    out = []
    for i in range(1, half + 1):
        total = 4 * i * w[i]
        for a in range(1, i):
            total = total + 4 * a * (i - a) * w[a] * w[i - a]
        for p in range(0, i):
            for q in range(0, i - p):
                total = total + _pair(cot[2 * p], dw[q], dw[i - 1 - p - q])
        out.append(float(np.max(np.abs(total))))
    return out


def _integrate(m: ChartMetric, f, volume=1.0):
    if m.is_grid:
        return m.integrate(f)
    return float(np.asarray(f)) * volume


def conformal_volume_shift(fg: FGExpansion, omega0, shift: Optional[ConformalShift] = None,
                           volume=1.0):
    """V_n(omega0) - V_n(0) = int sum_i v_{2i} omega_{n-2i} dvol_{h0}.

    ``volume`` is used for model metrics, which carry no chart volume.
    """
    n = fg.n
    if n % 2:
        raise DomainError("the conformal shift formula needs n even", n=n)
    shift = shift or hj_expand(fg, omega0)
    integrand = sum(fg.volume.coeff(2 * i) * shift.omega(n - 2 * i) for i in range(n // 2 + 1))
    return _integrate(fg.h0, integrand, volume)


def volume_shift_closed_form(fg: FGExpansion, omega0):
    """The explicit n = 2 and n = 4 displays, used as an independent check."""
    m = fg.h0
    n = fg.n
    omega0 = np.asarray(omega0, float)
    if n == 2:
        scal = cg.ricci_scalar(m)
        grad_sq = cg.inner_forms(m, _grad(fg, omega0), _grad(fg, omega0))
        return -0.25 * m.integrate(grad_sq + scal * omega0)
    if n == 4:
        h2 = fg.coefficient(2)
        d0 = _grad(fg, omega0)
        up = cg.raise_index(m, d0)
        grad_sq = np.einsum("...i,...i->...", d0, up)
        tr = cg.trace(m, h2)
        sig = elementary_symmetric(fg.endomorphism(2), 2)
        quad = (np.einsum("...ij,...i,...j->...", h2, up, up) - tr * grad_sq)
        lap = cg.laplacian(m, omega0)
        integrand = 0.25 * sig * omega0 + quad / 8 + lap * grad_sq / 16 - grad_sq ** 2 / 32
        return m.integrate(integrand)
    raise DomainError("closed form available for n = 2 and n = 4", n=n)


# ---------------------------------------------------------------------------
# Hessian


@dataclass
class HessianForm:
    """Hess(V_n) as a symmetric form on 1-forms (contravariant components)."""

    tensor: np.ndarray
    h0: ChartMetric
    min_eigenvalue: float
    max_eigenvalue: float

    @property
    def definite(self):
        return self.min_eigenvalue > 0 or self.max_eigenvalue < 0

    @property
    def sign(self):
        if self.min_eigenvalue > 0:
            return 1
        if self.max_eigenvalue < 0:
            return -1
        return 0

    def endomorphism(self):
        """The endomorphism h0 . Hess (eigenvalues relative to h0^{-1})."""
        return np.matmul(self.h0.components, self.tensor)

    def quadratic(self, omega0):
        """int Hess(d omega0, d omega0) dvol."""
        m = self.h0
        d0 = m.grid.gradient(np.asarray(omega0, float))
        return m.integrate(np.einsum("...ij,...i,...j->...", self.tensor, d0, d0))


def vn_hessian(fg: FGExpansion) -> HessianForm:
    """-sum_{j=1}^{n/2} v_{n-2j} h^{(2j-2)} / (2j)."""
    n = fg.n
    if n % 2:
        raise DomainError("the Hessian formula needs n even", n=n)
    cot = _cotangent_coeffs(fg, max(n - 2, 0))
    tensor = 0.0
    for j in range(1, n // 2 + 1):
        v = fg.volume.coeff(n - 2 * j)
        tensor = tensor - (v[..., None, None] if np.ndim(v) else v) * cot[2 * j - 2] / (2 * j)
    tensor = cg._sym(np.asarray(tensor))
    rel = np.linalg.eigvalsh(_relative(fg.h0, tensor))
    return HessianForm(tensor=tensor, h0=fg.h0, min_eigenvalue=float(np.min(rel)),
                       max_eigenvalue=float(np.max(rel)))


def hessian_second_difference(fg: FGExpansion, omega0, eps=1e-4, volume=1.0):
    """Second derivative of s -> V_n(s omega0) at 0 by Richardson-refined central differences.

    The shift is a polynomial of degree n in s, and for n <= 4 one refinement
    removes the truncation error exactly.
    """
    omega0 = np.asarray(omega0, float)

    def second(step):
        plus = conformal_volume_shift(fg, step * omega0, volume=volume)
        minus = conformal_volume_shift(fg, -step * omega0, volume=volume)
        return (plus + minus) / step ** 2  # shift(0) = 0

    coarse = second(eps)
    fine = second(eps / 2)
    return (4 * fine - coarse) / 3


def _relative(m, tensor):
    # eigenvalues of g^{1/2} T g^{1/2} equal those of g T and are real
    vals, vecs = np.linalg.eigh(m.components)
    root = vecs @ (np.sqrt(vals)[..., None] * np.swapaxes(vecs, -1, -2))
    return root @ tensor @ root


def einstein_hessian_constant(n, lam):
    """Scalar c with Hess = c h0^{-1} at an Einstein metric."""
    return -0.25 * (-lam / 4) ** (n // 2 - 1) * math.factorial(n) / math.factorial(n // 2) ** 2


def lcf_hessian(h2_end, n):
    """2^{-n/2} sum_j sigma_j(H)(-H)^{n/2-j-1}: the Newton transform form (pointwise)."""
    k = n // 2
    eye = np.broadcast_to(np.eye(h2_end.shape[-1]), h2_end.shape)
    total = np.zeros(h2_end.shape)
    for j in range(k):
        sig = elementary_symmetric(h2_end, j) if j else np.ones(h2_end.shape[:-2])
        power = np.linalg.matrix_power(-h2_end, k - j - 1) if k - j - 1 else eye
        total = total + sig[..., None, None] * power
    return 2.0 ** (-k) * total


def newton_transform_identity(eigenvalues, n):
    """Compare the sum form with 2^{-n/2} sigma_{n/2-1} of the complementary eigenvalues.

    Returns the maximal absolute difference on a diagonal H.
    """
    lam = np.asarray(eigenvalues, float)
    diag = lcf_hessian(np.diag(lam), n)
    k = n // 2
    worst = 0.0
    for ell in range(lam.size):
        rest = np.delete(lam, ell)
        expected = 2.0 ** (-k) * (elementary_symmetric(np.diag(rest), k - 1) if k > 1 else 1.0)
        worst = max(worst, abs(float(diag[ell, ell]) - float(expected)))
    offdiag = diag - np.diag(np.diag(diag))
    return max(worst, float(np.max(np.abs(offdiag))))


# ---------------------------------------------------------------------------
# linearization of v_n


def linearized_vn(fg: FGExpansion, f, hess: Optional[HessianForm] = None):
    """d*(Hess df) - n v_n f, the derivative of v_n(e^{2sf} h0) at s = 0."""
    m = fg.h0
    hess = hess or vn_hessian(fg)
    f = np.asarray(f, float)
    vn = fg.volume.coeff(fg.n)
    if not m.is_grid:
        if f.ndim:
            raise ArgumentError("model metrics accept constant f only")
        return -fg.n * vn * f
    return cg.weighted_laplacian(m, hess.tensor, f) - fg.n * vn * f


def vn_of(m: ChartMetric):
    """v_n of a metric through a fresh recursion (n even)."""
    fg = solve_fg(m, order=m.dim, diagnostics=False)
    return fg.volume.coeff(m.dim)


# ---------------------------------------------------------------------------
# anomaly tensors


def anomaly_tensors(fg: FGExpansion):
    """F_n and G_n = -(h_n + F_n)/4 with their constraint residuals (n = 2, 4)."""
    n = fg.n
    m = fg.h0
    g0 = m.components
    if n not in (2, 4):
        raise DomainError("anomaly tensors are implemented for n = 2 and n = 4", n=n)
    if fg.neumann is None:
        raise ArgumentError("anomaly tensors need the Neumann datum h_n")
    hn = fg.coefficient(n)
    vn = fg.volume.coeff(n)
    if n == 2:
        scal = cg.ricci_scalar(m) if m.is_grid else m.lam * 2.0
        f_n = 0.5 * np.asarray(scal)[..., None, None] * g0
    else:
        h2 = fg.coefficient(2)
        h2sq = h2 @ m.inverse @ h2
        tr2 = cg.trace(m, h2) if m.is_grid else float(np.trace(m.inverse @ h2))
        sig = elementary_symmetric(fg.endomorphism(2), 2)
        f_n = (-0.5 * h2sq + 0.25 * np.asarray(tr2)[..., None, None] * h2
               - 0.25 * np.asarray(sig)[..., None, None] * g0 + 0.5 * fg.obstruction)
    g_n = -0.25 * (hn + f_n)
    tr_g = np.sum(m.inverse * g_n, axis=(-1, -2))
    residuals = {"trace": float(np.max(np.abs(tr_g - 0.5 * vn)))}
    if m.is_grid:
        residuals["divergence"] = float(np.max(np.abs(cg.divergence(m, g_n))))
        g_tf = cg.trace_free(m, g_n)
    else:
        residuals["divergence"] = 0.0
        g_tf = g_n - (tr_g / n)[..., None, None] * g0
    out = {"F": f_n, "G": g_n, "G_tracefree": g_tf, "residuals": residuals}
    if not m.is_grid and m.lam is not None:
        out["einstein_report"] = einstein_anomaly_report(n, m.lam, f_n, g0)
    return out


def einstein_anomaly_report(n, lam, f_n, g0):
    """Compare the computed F_n multiple of h0 with the closed-form Einstein constant."""
    computed = float(np.sum(np.linalg.inv(g0) * f_n) / n)
    quoted = -2 * math.factorial(n - 1) / math.factorial(n // 2) ** 2 * (-lam / 4) ** (n // 2)
    vn = math.comb(n, n // 2) * (-lam / 4) ** (n // 2)
    return {
        "F_multiple_computed": computed,
        "F_multiple_quoted": quoted,
        "difference": computed - quoted,
        "trace_identity_computed": n * computed + 2 * vn,  # Tr F + T_n + 2 v_n with T_n = 0
        "trace_identity_quoted": n * quoted + 2 * vn,
    }


# ---------------------------------------------------------------------------
# uniformization


@dataclass
class FlowResult:
    metric: object
    omega: np.ndarray
    steps: int
    history: list
    residual: float
    target: float

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "residual", "min_hessian_eigenvalue", "volume"])
            for row in self.history:
                out.writerow([row["step"], f"{row['residual']:.17g}",
                              f"{row['min_hessian_eigenvalue']:.17g}", f"{row['volume']:.17g}"])


def _flat_inverse_laplacian(grid, coeff):
    """Inverse of -div(coeff grad) on mean-zero fields, constant coefficient matrix."""
    ks = np.meshgrid(*[np.fft.fftfreq(s, 1.0 / s) for s in grid.shape], indexing="ij")
    symbol = sum(coeff[a, b] * ks[a] * ks[b] for a in range(grid.dim) for b in range(grid.dim))
    symbol = np.where(symbol == 0, np.inf, symbol)

    def apply(r):
        return np.real(np.fft.ifftn(np.fft.fftn(r) / symbol))

    return apply


def _uniformize_surface(h0: ChartMetric, tol, max_steps, omega_init):
    grid = h0.grid
    sq = h0.sqrt_det
    scal0 = cg.ricci_scalar(h0)
    total = h0.integrate(scal0)
    weight = np.mean(sq[..., None, None] * h0.inverse, axis=tuple(range(grid.dim)))
    solve = _flat_inverse_laplacian(grid, 2.0 * weight)
    omega = np.zeros(grid.shape) if omega_init is None else np.array(omega_init, float)
    history = []

    def normalize(w):
        return w - 0.5 * math.log(h0.integrate(np.exp(2 * w)))

    omega = normalize(omega)
    for step in range(max_steps + 1):
        target = total  # unit volume: mean curvature equals the Gauss-Bonnet total
        scal_u = np.exp(-2 * omega) * (scal0 + 2 * cg.laplacian(h0, omega))
        residual = float(np.max(np.abs(scal_u - target)))
        history.append({"step": step, "residual": residual, "min_hessian_eigenvalue": -0.5,
                        "volume": h0.integrate(np.exp(2 * omega))})
        if residual < tol:
            return FlowResult(h0.conformal(omega), omega, step, history, residual, target)
        force = sq * (np.exp(2 * omega) * (scal_u - target))
        omega = normalize(omega - solve(force - np.mean(force)))
    raise ConvergenceError("surface flow hit the iteration cap", history=[h["residual"] for h in history])


def _uniformize_grid4(h0: ChartMetric, tol, max_steps, omega_init):
    omega = np.zeros(h0.grid.shape) if omega_init is None else np.array(omega_init, float)
    history = []
    for step in range(max_steps + 1):
        m = h0.conformal(omega)
        fg = solve_fg(m, order=4, diagnostics=False)
        hess = vn_hessian(fg)
        v4 = fg.volume.coeff(4)
        vol = m.volume()
        target = m.integrate(v4) / vol
        residual = float(np.max(np.abs(v4 - target)))
        history.append({"step": step, "residual": residual,
                        "min_hessian_eigenvalue": hess.min_eigenvalue, "volume": vol})
        if residual < tol:
            return FlowResult(m, omega, step, history, residual, target)
        if not hess.definite:
            raise EllipticityError("Hessian of V_4 is indefinite along the flow",
                                   min_eigenvalue=hess.min_eigenvalue,
                                   max_eigenvalue=hess.max_eigenvalue, step=step)
        size = v4.size
        lin = spla.LinearOperator((size, size), dtype=float,
                                  matvec=lambda f: linearized_vn(fg, f.reshape(v4.shape), hess).ravel())
        delta, info = spla.gmres(lin, -(v4 - target).ravel(), rtol=1e-12, maxiter=400)
        if info != 0:
            raise ConvergenceError("linearized v_4 solve failed", info=info)
        omega = omega + delta.reshape(v4.shape)
        omega = omega - 0.25 * math.log(h0.conformal(omega).volume())
    raise ConvergenceError("Newton flow hit the iteration cap",
                           history=[h["residual"] for h in history])


def uniformize_flow(h0, n=None, scheme=None, tol=1e-10, max_steps=None, omega_init=None):
    """Conformal representative with v_n constant and unit volume.

    ``h0`` is a grid ChartMetric (n = 2 flow, n = 4 Newton) or a
    :class:`SpherePairModel` (n = 4 Newton on axisymmetric conformal factors).
    Returns a :class:`FlowResult` (the metric is its ``metric`` field).
    """
    if isinstance(h0, SpherePairModel):
        return h0.newton_flow(tol=tol, max_steps=30 if max_steps is None else max_steps,
                              omega_init=omega_init)
    n = h0.dim if n is None else n
    if n != h0.dim:
        raise ArgumentError("n must match the metric dimension", n=n, dim=h0.dim)
    if not h0.is_grid:
        raise DomainError("uniformize_flow needs a grid metric or a SpherePairModel")
    if n == 2:
        if scheme not in (None, "flow"):
            raise ArgumentError("the n = 2 scheme is the preconditioned curvature flow")
        return _uniformize_surface(h0, tol, 200 if max_steps is None else max_steps, omega_init)
    if n == 4:
        if scheme not in (None, "newton"):
            raise ArgumentError("the n = 4 scheme is Newton iteration")
        return _uniformize_grid4(h0, tol, 30 if max_steps is None else max_steps, omega_init)
    raise DomainError("uniformize_flow supports n = 2 and n = 4", n=n)


# ---------------------------------------------------------------------------
# axisymmetric conformal factors on the product of two round 2-spheres


class SpherePairModel:
    """S^2 x S^2 (Ric = g, so lam = 1/3) with conformal factors depending on both polar angles.

    Collocation at Gauss-Legendre nodes in x_a = cos(theta_a); the azimuthal
    directions enter through the warped structure only.  Frame quantities are
    expressed in the orthonormal frame (e_theta1, e_phi1, e_theta2, e_phi2).
    """

    lam = 1.0 / 3.0
    dim = 4

    def __init__(self, nodes=16, base_omega=None):
        from numpy.polynomial import legendre

        x, wts = legendre.leggauss(nodes)
        self.nodes = nodes
        self.x = x
        vander = legendre.legvander(x, nodes - 1)
        inv = np.linalg.inv(vander)
        deriv = np.zeros_like(vander)
        for k in range(nodes):
            coef = np.zeros(nodes)
            coef[k] = 1.0
            deriv[:, k] = legendre.legval(x, legendre.legder(coef))
        self.diff = deriv @ inv
        self.weights = wts
        self.x1, self.x2 = np.meshgrid(x, x, indexing="ij")
        self.base_omega = np.zeros((nodes, nodes)) if base_omega is None else np.asarray(base_omega, float)

    # -- calculus on the node grid

    def d1(self, f):
        return self.diff @ f

    def d2(self, f):
        return f @ self.diff.T

    def integrate(self, f):
        """Integral against the round volume (2 pi)^2 dx1 dx2."""
        return float((2 * math.pi) ** 2 * self.weights @ f @ self.weights)

    @property
    def round_volume(self):
        return 16 * math.pi ** 2

    def schouten_frame(self, omega):
        """Schouten tensor of e^{2 omega} g in the g-orthonormal frame, shape (N, N, 4, 4)."""
        x1, x2 = self.x1, self.x2
        w1 = self.d1(omega)
        w2 = self.d2(omega)
        w11 = self.d1(w1)
        w22 = self.d2(w2)
        w12 = self.d2(w1)
        s1 = np.sqrt(1 - x1 ** 2)
        s2 = np.sqrt(1 - x2 ** 2)
        hess = np.zeros(omega.shape + (4, 4))
        hess[..., 0, 0] = (1 - x1 ** 2) * w11 - x1 * w1
        hess[..., 1, 1] = -x1 * w1
        hess[..., 2, 2] = (1 - x2 ** 2) * w22 - x2 * w2
        hess[..., 3, 3] = -x2 * w2
        hess[..., 0, 2] = hess[..., 2, 0] = s1 * s2 * w12
        grad = np.zeros(omega.shape + (4,))
        grad[..., 0] = -s1 * w1
        grad[..., 2] = -s2 * w2
        grad_sq = np.sum(grad ** 2, axis=-1)
        eye = np.eye(4)
        return (eye / 6.0 - hess + grad[..., :, None] * grad[..., None, :]
                - 0.5 * grad_sq[..., None, None] * eye)

    def total_omega(self, omega):
        return self.base_omega + omega

    def v2(self, omega):
        w = self.total_omega(omega)
        p = self.schouten_frame(w)
        return -0.5 * np.exp(-2 * w) * np.trace(p, axis1=-2, axis2=-1)

    def v4(self, omega):
        w = self.total_omega(omega)
        p = self.schouten_frame(w)
        return 0.25 * np.exp(-4 * w) * elementary_symmetric(p, 2)

    def volume(self, omega):
        return self.integrate(np.exp(4 * self.total_omega(omega)))

    def hessian_frame(self, omega):
        """Hess(V_4) of e^{2w} g in the g-frame: -(1/4) e^{-4w}(P - Tr P)."""
        w = self.total_omega(omega)
        p = self.schouten_frame(w)
        tr = np.trace(p, axis1=-2, axis2=-1)
        return -0.25 * np.exp(-4 * w)[..., None, None] * (p - tr[..., None, None] * np.eye(4))

    def linearized(self, omega, f, hess=None):
        """d*(Hess df) - 4 v_4 f for the metric e^{2w} g, w = base + omega."""
        w = self.total_omega(omega)
        hess = self.hessian_frame(omega) if hess is None else hess
        s1 = np.sqrt(1 - self.x1 ** 2)
        s2 = np.sqrt(1 - self.x2 ** 2)
        h11 = (1 - self.x1 ** 2) * hess[..., 0, 0]
        h22 = (1 - self.x2 ** 2) * hess[..., 2, 2]
        h12 = s1 * s2 * hess[..., 0, 2]
        f1 = self.d1(f)
        f2 = self.d2(f)
        vol = np.exp(4 * w)
        flux1 = vol * (h11 * f1 + h12 * f2)
        flux2 = vol * (h12 * f1 + h22 * f2)
        div = -(self.d1(flux1) + self.d2(flux2)) / vol
        return div - 4 * self.v4(omega) * f

    def linearized_matrix(self, omega):
        size = self.nodes ** 2
        hess = self.hessian_frame(omega)
        cols = []
        for k in range(size):
            e = np.zeros(size)
            e[k] = 1.0
            cols.append(self.linearized(omega, e.reshape(self.x1.shape), hess).ravel())
        return np.array(cols).T

    def hessian_bounds(self, omega):
        e = np.linalg.eigvalsh(self.hessian_frame(omega))
        return float(np.min(e)), float(np.max(e))

    def normalize(self, omega):
        return omega - 0.25 * math.log(self.volume(omega))

    def newton_flow(self, tol=1e-10, max_steps=30, omega_init=None):
        omega = np.zeros(self.x1.shape) if omega_init is None else np.array(omega_init, float)
        omega = self.normalize(omega)
        history = []
        for step in range(max_steps + 1):
            v4 = self.v4(omega)
            vol = self.volume(omega)
            target = self.integrate(v4 * np.exp(4 * self.total_omega(omega))) / vol
            residual = float(np.max(np.abs(v4 - target)))
            lo, hi = self.hessian_bounds(omega)
            history.append({"step": step, "residual": residual, "min_hessian_eigenvalue": lo,
                            "volume": vol})
            if residual < tol:
                return FlowResult(self, omega, step, history, residual, target)
            if not (lo > 0 or hi < 0):
                raise EllipticityError("Hessian of V_4 is indefinite along the flow",
                                       min_eigenvalue=lo, max_eigenvalue=hi, step=step)
            # full collocation steps excite grid-scale modes; solve in a smooth subspace
            basis = self._smooth_basis()
            jac = self.linearized_matrix(omega)
            coef = np.linalg.lstsq(jac @ basis, -(v4 - target).ravel(), rcond=None)[0]
            omega = self.normalize(omega + (basis @ coef).reshape(omega.shape))
        raise ConvergenceError("Newton flow hit the iteration cap",
                               history=[h["residual"] for h in history])

    def _smooth_basis(self):
        from numpy.polynomial import legendre

        degree = self.nodes // 2
        cols = []
        for a in range(degree + 1):
            for b in range(degree + 1):
                coef = np.zeros((degree + 1, degree + 1))
                coef[a, b] = 1.0
                cols.append(legendre.legval2d(self.x1, self.x2, coef).ravel())
        return np.array(cols).T

    def axisymmetric_function(self, seed=0, amplitude=0.01, degree=3):
        """Smooth random function of (x1, x2): a low-degree Legendre combination."""
        from numpy.polynomial import legendre

        rng = np.random.default_rng(seed)
        coef = np.zeros((degree + 1, degree + 1))
        coef[:, :] = rng.standard_normal((degree + 1, degree + 1))
        coef[0, 0] = 0.0
        vals = legendre.legval2d(self.x1, self.x2, coef)
        return amplitude * vals / np.max(np.abs(vals))


def mean_zero_basis_criticality(model: SpherePairModel, omega, count=6, seed=0):
    """max |int v_4 f dvol| over mean-zero test functions f (volume-normalized)."""
    w = model.total_omega(omega)
    vol_density = np.exp(4 * w)
    v4 = model.v4(omega)
    worst = 0.0
    for k in range(count):
        f = model.axisymmetric_function(seed=seed + k, amplitude=1.0)
        f = f - model.integrate(f * vol_density) / model.integrate(vol_density)
        worst = max(worst, abs(model.integrate(v4 * f * vol_density)
                               - model.integrate(v4 * vol_density) * model.integrate(f * vol_density)
                               / model.integrate(vol_density)))
    return worst


def sphere_pair_linearization_ratio(model: SpherePairModel, f, eps=1e-4):
    """Finite-difference v2' and v4' along e^{2sf} and their fitted ratio."""
    p2, p4 = model.v2(eps * f), model.v4(eps * f)
    m2, m4 = model.v2(-eps * f), model.v4(-eps * f)
    dv2 = (p2 - m2) / (2 * eps)
    dv4 = (p4 - m4) / (2 * eps)
    ratio = float(np.sum(dv2 * dv4) / np.sum(dv2 * dv2))
    return {"dv2": dv2, "dv4": dv4, "ratio": ratio}


__all__ = [
    "ConformalShift",
    "FlowResult",
    "HessianForm",
    "SpherePairModel",
    "anomaly_tensors",
    "conformal_volume_shift",
    "einstein_anomaly_report",
    "einstein_hessian_constant",
    "hessian_second_difference",
    "hj_expand",
    "lcf_hessian",
    "linearized_vn",
    "mean_zero_basis_criticality",
    "newton_transform_identity",
    "sphere_pair_linearization_ratio",
    "uniformize_flow",
    "vn_hessian",
    "vn_of",
    "volume_shift_closed_form",
]
