"""Truncated power series in the boundary variable x with single-log terms.

A series is ``sum_p c_p x^p + sum_p l_p x^p log x`` truncated at ``order``.
Coefficients are numpy arrays of a common shape (scalar fields, matrix
fields, ...).  Products of two log terms would give log^2 x, which first
appears at x^{2n}; inside the truncation such a product raises.

Log terms are kept at every power from n up to the truncation, because the
log coefficient at x^n feeds the non-log coefficients above it through x d/dx.
"""

from __future__ import annotations

import numpy as np

from .errors import InversionError, ShapeError


def _clean(d):
    return {p: c for p, c in d.items() if c is not None}


class XSeries:
    """Truncated series with array coefficients.

    Parameters
    ----------
    n : int
        Boundary dimension (position of the first admissible log term).
    order : int
        Highest power kept.
    terms, logs : dict
        Power -> coefficient array for x^p and x^p log x.
    shape : tuple
        Coefficient shape, needed when both dicts are empty.
    """

    __slots__ = ("n", "order", "terms", "logs", "shape")

    def __init__(self, n, order, terms=None, logs=None, shape=None):
        self.n = int(n)
        self.order = int(order)
        terms = _clean(dict(terms or {}))
        logs = _clean(dict(logs or {}))
        if shape is None:
            first = next(iter(terms.values()), None)
            if first is None:
                first = next(iter(logs.values()), None)
            if first is None:
                raise ShapeError("empty series needs an explicit coefficient shape")
            shape = np.shape(first)
        self.shape = tuple(shape)
        self.terms = {}
        for p, c in terms.items():
            if p <= self.order:
                c = np.asarray(c, float)
                if c.shape != self.shape:
                    c = np.broadcast_to(c, self.shape).copy()
                self.terms[int(p)] = c
        self.logs = {}
        for p, c in logs.items():
            if p <= self.order:
                c = np.asarray(c, float)
                if c.shape != self.shape:
                    c = np.broadcast_to(c, self.shape).copy()
                self.logs[int(p)] = c

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, n, order, c):
        c = np.asarray(c, float)
        return cls(n, order, {0: c}, shape=c.shape)

    @classmethod
    def zeros(cls, n, order, shape):
        return cls(n, order, shape=shape)

    @classmethod
    def from_coeffs(cls, n, order, coeffs, log_coeff=None):
        """Even-power constructor: ``coeffs[j]`` multiplies x^{2j}."""
        terms = {2 * j: c for j, c in enumerate(coeffs)}
        logs = {} if log_coeff is None else {n: log_coeff}
        return cls(n, order, terms, logs)

    def copy(self):
        return XSeries(self.n, self.order, self.terms, self.logs, self.shape)

    def with_order(self, order):
        return XSeries(self.n, order, self.terms, self.logs, self.shape)

    # -- access ---------------------------------------------------------------

    def coeff(self, p):
        c = self.terms.get(p)
        return np.zeros(self.shape) if c is None else c

    def log_at(self, p):
        c = self.logs.get(p)
        return np.zeros(self.shape) if c is None else c

    @property
    def log_coeff(self):
        """Coefficient of x^n log x (``None`` when absent)."""
        return self.logs.get(self.n)

    @property
    def even_coeffs(self):
        return [self.coeff(p) for p in range(0, self.order + 1, 2)]

    def powers(self):
        return sorted(set(self.terms) | set(self.logs))

    def set_coeff(self, p, c):
        out = self.copy()
        out.terms[int(p)] = np.asarray(c, float).reshape(self.shape)
        return out

    def set_log(self, p, c):
        out = self.copy()
        out.logs[int(p)] = np.asarray(c, float).reshape(self.shape)
        return out

    def __call__(self, x):
        """Evaluate at a positive number x (coefficientwise sum)."""
        x = float(x)
        total = np.zeros(self.shape)
        for p, c in self.terms.items():
            total = total + c * x ** p
        if self.logs:
            lx = np.log(x)
            for p, c in self.logs.items():
                total = total + c * x ** p * lx
        return total

    def max_abs(self):
        vals = [float(np.max(np.abs(c))) for c in self.terms.values() if c.size]
        vals += [float(np.max(np.abs(c))) for c in self.logs.values() if c.size]
        return max(vals, default=0.0)

    # -- linear structure -----------------------------------------------------

    def _compatible(self, other):
        if not isinstance(other, XSeries):
            raise TypeError("expected an XSeries")
        if other.n != self.n:
            raise ShapeError("series for different boundary dimensions")
        return min(self.order, other.order)

    def __add__(self, other):
        if not isinstance(other, XSeries):
            return self + XSeries.constant(self.n, self.order, np.broadcast_to(other, self.shape))
        order = self._compatible(other)
        terms = dict(self.terms)
        for p, c in other.terms.items():
            terms[p] = terms[p] + c if p in terms else c
        logs = dict(self.logs)
        for p, c in other.logs.items():
            logs[p] = logs[p] + c if p in logs else c
        return XSeries(self.n, order, terms, logs, np.broadcast_shapes(self.shape, other.shape))

    __radd__ = __add__

    def __neg__(self):
        return self.map(lambda c: -c)

    def __sub__(self, other):
        return self + (-other if isinstance(other, XSeries) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor):
        """Multiply by a number or by a fixed array broadcast over coefficients."""
        factor = np.asarray(factor, float)
        return self.map(lambda c: c * factor)

    def __mul__(self, other):
        if isinstance(other, XSeries):
            return series_mul(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __matmul__(self, other):
        return series_mul(self, other, np.matmul)

    def map(self, fn, shape=None):
        """Apply a linear coefficient map to every coefficient."""
        terms = {p: fn(c) for p, c in self.terms.items()}
        logs = {p: fn(c) for p, c in self.logs.items()}
        if shape is None:
            probe = next(iter(terms.values()), None)
            if probe is None:
                probe = next(iter(logs.values()), None)
            shape = np.shape(probe) if probe is not None else np.shape(fn(np.zeros(self.shape)))
        return XSeries(self.n, self.order, terms, logs, shape)

    def truncate(self, order):
        return XSeries(self.n, min(order, self.order), self.terms, self.logs, self.shape)

    def shift(self, k):
        """Multiply by x^k (k may be negative)."""
        terms = {p + k: c for p, c in self.terms.items()}
        logs = {p + k: c for p, c in self.logs.items()}
        if any(p < 0 for p in list(terms) + list(logs)):
            raise ShapeError("shift produced a negative power")
        return XSeries(self.n, self.order + k, terms, logs, self.shape)

    def euler(self):
        """x d/dx."""
        terms = {p: p * c for p, c in self.terms.items() if p != 0}
        logs = {p: p * c for p, c in self.logs.items()}
        for p, c in self.logs.items():
            terms[p] = terms[p] + c if p in terms else c
        return XSeries(self.n, self.order, terms, logs, self.shape)

    def dx(self):
        """d/dx, lowering the truncation order by one."""
        return self.euler().shift(-1)


# ---------------------------------------------------------------------------
# products and inverses


def _default_product(a, b):
    return a * b


def series_mul(a: XSeries, b: XSeries, product=None) -> XSeries:
    """Cauchy product with log bookkeeping; ``product`` combines two coefficients."""
    product = product or _default_product
    order = a._compatible(b)
    terms, logs = {}, {}

    def acc(store, p, val):
        store[p] = store[p] + val if p in store else val

    for p, ca in a.terms.items():
        for q, cb in b.terms.items():
            if p + q <= order:
                acc(terms, p + q, product(ca, cb))
        for q, cb in b.logs.items():
            if p + q <= order:
                acc(logs, p + q, product(ca, cb))
    for p, ca in a.logs.items():
        for q, cb in b.terms.items():
            if p + q <= order:
                acc(logs, p + q, product(ca, cb))
        for q, cb in b.logs.items():
            if p + q <= order:
                val = product(ca, cb)
                if np.any(val != 0):
                    raise ShapeError("log^2 term inside the truncation", power=p + q)
    shape = None
    if not terms and not logs:
        shape = np.shape(product(np.zeros(a.shape), np.zeros(b.shape)))
    return XSeries(a.n, order, terms, logs, shape)


def series_inv(a: XSeries) -> XSeries:
    """Inverse of a scalar or square-matrix series with invertible leading term."""
    lead = a.coeff(0)
    matrix = len(a.shape) >= 2 and a.shape[-1] == a.shape[-2] and lead.ndim >= 2
    if matrix:
        try:
            lead_inv = np.linalg.inv(lead)
        except np.linalg.LinAlgError as exc:
            raise InversionError("singular leading coefficient") from exc
        # Frobenius condition estimate; an SVD per grid point is too slow here
        cond = np.linalg.norm(lead, axis=(-2, -1)) * np.linalg.norm(lead_inv, axis=(-2, -1))
        if not np.all(np.isfinite(cond)) or np.max(cond) > 1e14:
            raise InversionError("singular leading coefficient", condition=float(np.max(cond)))
        prod = np.matmul
    else:
        if np.any(lead == 0):
            raise InversionError("leading coefficient vanishes")
        lead_inv = 1.0 / lead
        prod = _default_product
    rest = a.copy()
    rest.terms.pop(0, None)
    lead_series = XSeries(a.n, a.order, {0: lead_inv}, shape=a.shape)
    step = series_mul(lead_series, rest, prod).scale(-1.0)
    result = lead_series
    term = lead_series
    low = min([p for p in rest.powers() if p > 0], default=None)
    if low is None:
        return result
    for _ in range(a.order // low):
        term = series_mul(step, term, prod)
        result = result + term
    return result


def series_trace(a: XSeries) -> XSeries:
    """Matrix trace of an endomorphism-valued series."""
    return a.map(lambda c: np.trace(c, axis1=-2, axis2=-1), shape=a.shape[:-2])


def scalar_times(s: XSeries, t: XSeries) -> XSeries:
    """Scalar series times a matrix-valued series."""
    return series_mul(s, t, lambda u, v: u[..., None, None] * v)


def series_exp(s: XSeries) -> XSeries:
    """exp of a scalar series without constant term."""
    if 0 in s.terms and np.any(s.terms[0] != 0):
        raise ShapeError("series_exp expects a vanishing constant term")
    one = XSeries(s.n, s.order, {0: np.ones(s.shape)}, shape=s.shape)
    result = one
    term = one
    low = min([p for p in s.powers() if p > 0], default=None)
    if low is None:
        return result
    for k in range(1, s.order // low + 1):
        term = series_mul(term, s).scale(1.0 / k)
        result = result + term
    return result


def series_log_identity(m: XSeries) -> XSeries:
    """log(I + M) for a matrix series M without constant term."""
    low = min([p for p in m.powers() if p > 0], default=None)
    result = XSeries(m.n, m.order, shape=m.shape)
    if low is None:
        return result
    term = m
    for k in range(1, m.order // low + 1):
        result = result + term.scale(((-1) ** (k + 1)) / k)
        term = series_mul(term, m, np.matmul)
    return result


def endomorphism(h: XSeries, h0) -> XSeries:
    """h0^{-1} h_x, the endomorphism form used for traces and determinants."""
    h0inv = np.linalg.inv(np.asarray(h0, float))
    return h.map(lambda c: np.matmul(h0inv, c))


def sqrt_det_series(h: XSeries, h0) -> XSeries:
    """v(x) = sqrt(det(h0^{-1} h_x)) as a scalar series."""
    h0 = np.asarray(getattr(h0, "components", h0), float)
    lead = h.coeff(0)
    if np.max(np.abs(lead - h0)) > 1e-12 * max(1.0, float(np.max(np.abs(h0)))):
        raise ShapeError("leading coefficient differs from h0")
    end = endomorphism(h, h0)
    eye = np.broadcast_to(np.eye(h0.shape[-1]), end.shape)
    m = end - XSeries(h.n, h.order, {0: eye}, shape=end.shape)
    m.terms.pop(0, None)
    logdet = series_trace(series_log_identity(m))
    return series_exp(logdet.scale(0.5))


def a_x_series(h: XSeries) -> XSeries:
    """A_x = h_x^{-1} d/dx h_x, truncated at order - 1."""
    return series_mul(series_inv(h), h.dx(), np.matmul).truncate(h.order - 1)


def euler_endomorphism(h: XSeries) -> XSeries:
    """B = h^{-1} x d/dx h = x A_x."""
    return series_mul(series_inv(h), h.euler(), np.matmul)
