import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from renvol.errors import InversionError, ShapeError
from renvol.xseries import (
    XSeries,
    a_x_series,
    series_exp,
    series_inv,
    series_log_identity,
    series_mul,
    sqrt_det_series,
)

coeff = st.floats(-2.0, 2.0, allow_nan=False)


def _scalar(n, order, coeffs):
    return XSeries(n, order, {p: np.array(c) for p, c in enumerate(coeffs)}, shape=())


@given(st.lists(coeff, min_size=1, max_size=6), st.lists(coeff, min_size=1, max_size=6))
def test_product_matches_polynomial_multiplication(left, right):
    order = 6
    prod = series_mul(_scalar(4, order, left), _scalar(4, order, right))
    ref = np.polynomial.polynomial.polymul(left, right)
    for p in range(order + 1):
        expected = ref[p] if p < len(ref) else 0.0
        assert float(prod.coeff(p)) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0.5, 2.0), st.lists(coeff, min_size=1, max_size=5))
def test_inverse_is_two_sided(lead, rest):
    series = _scalar(4, 8, [lead] + rest)
    one = series * series_inv(series)
    assert float(one.coeff(0)) == pytest.approx(1.0)
    scale = (1 + max(map(abs, rest)) / lead) ** 8
    assert max(abs(float(one.coeff(p))) for p in range(1, 9)) < 1e-12 * scale


@given(st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=4))
def test_exp_of_log_recovers_matrix_series(entries):
    # diagonal matrix series I + x^2 D: log then exp is the identity map
    d = np.diag(entries)
    m = XSeries(4, 8, {2: d})
    logm = series_log_identity(m)
    diag_log = {p: np.diag(logm.coeff(p)) for p in logm.terms}
    for k, e in enumerate(entries):
        s = XSeries(4, 8, {p: np.array(v[k]) for p, v in diag_log.items()}, shape=())
        back = series_exp(s)
        assert float(back.coeff(2)) == pytest.approx(e, abs=1e-12)
        assert abs(float(back.coeff(4))) < 1e-12


def test_euler_acts_on_log_terms():
    s = XSeries(4, 6, {2: np.array(1.0)}, {4: np.array(3.0)})
    e = s.euler()
    assert float(e.coeff(2)) == 2.0
    assert float(e.coeff(4)) == 3.0  # x d/dx (x^4 log x) = 4 x^4 log x + x^4
    assert float(e.log_at(4)) == 12.0


def test_evaluation_against_closed_form():
    s = XSeries(4, 6, {0: np.array(1.0), 2: np.array(-0.5)}, {4: np.array(2.0)})
    x = 0.3
    assert float(s(x)) == pytest.approx(1 - 0.5 * x**2 + 2 * x**4 * np.log(x))


def test_log_squared_inside_truncation_raises():
    s = XSeries(2, 4, {0: np.array(1.0)}, {2: np.array(1.0)})
    with pytest.raises(ShapeError):
        series_mul(s, s)


def test_log_squared_beyond_truncation_is_dropped():
    s = XSeries(4, 6, {0: np.array(1.0)}, {4: np.array(1.0)})
    sq = series_mul(s, s)
    assert float(sq.log_at(4)) == 2.0


def test_singular_leading_term():
    with pytest.raises(InversionError):
        series_inv(XSeries(4, 4, {0: np.zeros((2, 2)), 2: np.eye(2)}))


def test_sqrt_det_of_conformal_series():
    # h_x = (1 + c x^2)^2 h0 in dimension 3 has sqrt det ratio (1 + c x^2)^3
    h0 = np.diag([1.0, 2.0, 0.5])
    c = -0.3
    h = XSeries(3, 8, {0: h0, 2: 2 * c * h0, 4: c * c * h0})
    v = sqrt_det_series(h, h0)
    ref = np.polynomial.polynomial.polypow([1.0, 0.0, c], 3)
    for p in range(9):
        expected = ref[p] if p < len(ref) else 0.0
        assert float(v.coeff(p)) == pytest.approx(expected, abs=1e-13)


def test_a_x_of_scalar_warp():
    # h_x = (1 + x^2) I: A_x = 2x / (1 + x^2) = 2x - 2x^3 + ...
    h = XSeries(2, 6, {0: np.eye(2), 2: np.eye(2)})
    a = a_x_series(h)
    assert np.allclose(a.coeff(1), 2 * np.eye(2))
    assert np.allclose(a.coeff(3), -2 * np.eye(2))
    assert np.allclose(a.coeff(5), 2 * np.eye(2))


def test_empty_series_needs_shape():
    with pytest.raises(ShapeError):
        XSeries(4, 4)
