import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from renvol.errors import ArgumentError, ConditioningError, DomainError
from renvol.fuchsian_spectral import (
    A_AT_ZERO,
    C0,
    PSI_FIVE_HALVES,
    CylinderMode,
    Interval,
    SpectralPoint,
    a_zero_enclosure,
    chebyshev_nodes,
    cylinder_linop_apply,
    digamma,
    dirichlet_ground_energy,
    g_from_scattering,
    gamma_ratio,
    get_multiplier,
    h0_imaginary_factored,
    h0_imaginary_quoted,
    h_lower_curve,
    hessian_multiplier_H,
    indicial_roots,
    log_gamma,
    multiplier_G_display,
    multiplier_G_n4,
    multiplier_n_odd,
    obstruction_multiplier,
    ode_oracle,
    positivity_certificate,
    re_digamma_series,
    real_curve_rows,
    reduced_potential,
    scattering_laurent,
    scattering_S,
    spot_check,
    substitution_power,
    weighted_pairing,
)
from renvol.fuchsian_spectral import special as sf
from renvol.fuchsian_spectral.intervals import re_digamma_enclosure

mpmath.mp.dps = 40


def _real(u, n=4, parity=0):
    return SpectralPoint.from_u(u, n, parity)


def _imag(lam, n=4, parity=0):
    return SpectralPoint.from_u(lam, n, parity, branch="imaginary")


# special functions


def test_constants_against_mpmath():
    psi52 = mpmath.digamma(mpmath.mpf(5) / 2)
    c0 = -mpmath.mpf(5) / 2 + 2 * mpmath.euler - 2 * mpmath.log(2)
    a0 = c0 + 1 - mpmath.pi + 2 * psi52
    assert PSI_FIVE_HALVES == pytest.approx(float(psi52), rel=1e-15)
    assert C0 == pytest.approx(float(c0), rel=1e-15)
    assert A_AT_ZERO == pytest.approx(float(a0), rel=1e-15)
    assert round(PSI_FIVE_HALVES, 5) == 0.70316
    assert round(C0, 7) == -2.7318630
    box = a_zero_enclosure()
    assert box.contains(float(a0))
    assert -3.468 < box.lo <= box.hi < -3.467
    assert sf.c0_enclosure().contains(float(c0))
    assert sf.psi_five_halves_enclosure().contains(float(psi52))


@given(st.floats(1.0, 40.0), st.floats(-30.0, 30.0))
def test_re_digamma_series_and_enclosure(sigma, t):
    exact = float(mpmath.re(mpmath.digamma(mpmath.mpc(sigma, t))))
    assert re_digamma_series(sigma / 8, t) == pytest.approx(
        float(mpmath.re(mpmath.digamma(mpmath.mpc(sigma / 8, t)))), rel=1e-13, abs=1e-13)
    assert re_digamma_series(sigma, t) == pytest.approx(exact, rel=1e-13, abs=1e-14)
    box = re_digamma_enclosure(sigma, abs(t))
    assert box.lo <= exact <= box.hi
    assert box.width < 1e-10 * max(1.0, abs(exact))


@given(st.floats(0.1, 30.0))
def test_float_gamma_routes(x):
    assert log_gamma(x) == pytest.approx(float(mpmath.loggamma(x)), rel=1e-13, abs=1e-14)
    assert digamma(x) == pytest.approx(float(mpmath.digamma(x)), rel=1e-13, abs=1e-14)
    assert gamma_ratio(x + 0.5, x) == pytest.approx(float(mpmath.gamma(x + 0.5) / mpmath.gamma(x)), rel=1e-12)


def test_gamma_poles():
    for bad in (0.0, -1.0, -3.0):
        with pytest.raises(DomainError):
            log_gamma(bad)
        with pytest.raises(DomainError):
            digamma(bad)
    assert gamma_ratio(1.5, -2.0) == 0.0


@given(st.floats(-50, 50), st.floats(0, 3), st.floats(-50, 50), st.floats(0, 3))
def test_interval_arithmetic_contains_exact_results(a, wa, b, wb):
    x, y = Interval(a, a + wa), Interval(b, b + wb)
    corners = [(mpmath.mpf(p), mpmath.mpf(q)) for p in (x.lo, x.hi) for q in (y.lo, y.hi)]
    for box, op in ((x + y, lambda p, q: p + q), (x - y, lambda p, q: p - q), (x * y, lambda p, q: p * q)):
        vals = [op(p, q) for p, q in corners]
        assert box.lo <= min(vals) and max(vals) <= box.hi
    if y.lo > 0:
        vals = [p / q for p, q in corners]
        box = x / y
        assert box.lo <= min(vals) and max(vals) <= box.hi


# scattering coefficients


def test_scattering_realness():
    point = SpectralPoint(1.0 + 0.81, 3, 1)  # alpha = 0.9
    value = scattering_S(1.7, point)
    assert abs(value.imag) < 1e-13 * max(1.0, abs(value))


@given(st.floats(0.3, 2.8), st.floats(1.05, 6.0), st.integers(0, 1))
def test_scattering_forms_agree(z, gamma, parity):
    assume(abs(z - round(z)) > 1e-3)  # Gamma(-z) poles
    point = SpectralPoint(gamma, 3, parity)
    prod = scattering_S(z, point, "product")
    refl = scattering_S(z, point, "reflected")
    assert abs(prod - refl) < 1e-12 * max(1.0, abs(prod))


def test_laurent_data_at_the_resonance():
    point = SpectralPoint(4.0, 4, 0)
    data = scattering_S(2.0, point)
    assert data.residue.real == pytest.approx(-0.25, abs=1e-12)
    fit = ode_oracle(point)
    # log coefficient twice the residue, matching the obstruction multiplier
    assert fit.c_log == pytest.approx(2 * data.residue.real, abs=1e-8)
    assert obstruction_multiplier(4.0) == -0.5
    assert fit.c_next == pytest.approx(data.finite_part.real - point.potential**2 / 32, abs=1e-8)
    with pytest.raises(ArgumentError):
        scattering_S(1.2, point, form="series")


# multipliers


def test_odd_multiplier_parity_product():
    for u in (0.2, 1.0, 3.0):
        prod = multiplier_n_odd(_real(u, 3, 0), raw=True) * multiplier_n_odd(_real(u, 3, 1), raw=True)
        assert prod / (u * u * (u * u + 1) ** 2) == pytest.approx(1.0, rel=1e-13)


def test_odd_multiplier_asymptotics_and_limit():
    tanh_parity = next(p for p in (0, 1) if multiplier_n_odd(_real(0.0, 3, p), raw=True) == 0.0)
    big = multiplier_n_odd(_real(30.0, 3, tanh_parity), raw=True)
    assert big / (30.0 * (900.0 + 1)) == pytest.approx(1.0, rel=1e-12)
    coth = multiplier_n_odd(_real(0.0, 3, 1 - tanh_parity), raw=True)
    assert coth == pytest.approx(2 / math.pi, rel=1e-14)
    with pytest.raises(ArgumentError):
        multiplier_n_odd(_real(1.0, 4))


def test_odd_multiplier_at_u_one_matches_oracle():
    for parity in (0, 1):
        point = _real(1.0, 3, parity)
        assert abs(multiplier_n_odd(point) - ode_oracle(point).c_next) < 1e-6


def test_free_equation_oracle():
    # nu(nu + 1) = 0: s is cosh or sinh of 2t, exactly 2^{z-1} x^{-z} +- 2^{-z-1} x^{z}
    for parity, sign in ((0, 1), (1, -1)):
        fit = ode_oracle(SpectralPoint(2.0, 4, parity))
        assert fit.c_log == 0.0
        assert fit.c_next == pytest.approx(sign / 16, abs=1e-10)
        assert fit.residual < 1e-8


def test_parity_difference_of_G():
    for u in (0.0, 0.4, 1.7):
        x = u * u + 0.25
        flip = -(2 * math.pi / math.cosh(math.pi * u)) * x * (x + 2) / 32
        assert multiplier_G_n4(_real(u, parity=1)) - multiplier_G_n4(_real(u)) == pytest.approx(flip, rel=1e-12)


def test_G_at_zero_in_closed_form():
    x = 0.25
    head = C0 - math.pi + 2 * PSI_FIVE_HALVES
    assert multiplier_G_n4(_real(0.0)) == pytest.approx(-(head * x * (x + 2) + x * x) / 32, rel=1e-14)


def test_G_display_agrees_on_real_branch_only():
    for u in (0.3, 1.1):
        assert multiplier_G_display(_real(u)) == pytest.approx(multiplier_G_n4(_real(u)), rel=1e-12)
    lam = 0.3
    assert abs(multiplier_G_display(_imag(lam)) - multiplier_G_n4(_imag(lam))) > 1e-3


def test_spectral_assumption_domain():
    for gamma in (2.0, 1.5):
        with pytest.raises(DomainError):
            multiplier_G_n4(SpectralPoint(gamma, 4))
    with pytest.raises(ArgumentError):
        multiplier_G_n4(SpectralPoint(3.0, 3))
    with pytest.raises(DomainError):
        SpectralPoint(-0.1, 4)


@pytest.mark.parametrize("parity", [0, 1])
def test_branch_continuity(parity):
    tiny = 1e-6
    for name, n in (("G", 4), ("H", 4), ("F", 3), ("ObsMult", 4)):
        mult = get_multiplier(name)
        above = mult.eval(_real(tiny, n, parity))
        below = mult.eval(_imag(tiny, n, parity))
        assert abs(above - below) < 1e-9 * max(1.0, abs(above)), name


@settings(max_examples=10)
@given(st.floats(0.05, 2.5), st.integers(0, 1))
def test_multipliers_match_oracle(u, parity):
    for name, n in (("F", 3), ("G", 4), ("ObsMult", 4)):
        mult = get_multiplier(name)
        point = _real(u, n, parity)
        closed = mult.eval(point)
        assert abs(closed - mult.oracle(point)) < 1e-6 * (1 + abs(closed)), name


def test_imaginary_branch_matches_oracle():
    for lam in (0.05, 0.25, 0.45):
        for parity in (0, 1):
            point = _imag(lam, 4, parity)
            closed = multiplier_G_n4(point)
            assert abs(closed - ode_oracle(point).c_next) < 1e-6 * (1 + abs(closed))


def test_fit_window_conditioning():
    point = _real(1.0)
    with pytest.raises(ConditioningError):
        ode_oracle(point, window=(2 * math.exp(-14), 2 * math.exp(-9)))
    with pytest.raises(ArgumentError):
        ode_oracle(point, window=(0.5, 3.0))
    assert ode_oracle(point).condition < 1e4


def test_hessian_assembly_routes():
    gammas = [2.25 + u * u for u in np.linspace(0.0, 3.0, 7)] + [2.25 - v * v for v in (0.1, 0.3, 0.45)]
    for gamma in gammas:
        for parity in (0, 1):
            point = SpectralPoint(gamma, 4, parity)
            diag = hessian_multiplier_H(point, diagnostics=True)
            assert abs(multiplier_G_n4(point) - g_from_scattering(point)) < 1e-10
            assert abs(diag["assembly"] - diag["display_with_one"]) < 1e-10 * max(1.0, abs(diag["assembly"]))
            if point.branch == "real":
                x = gamma - 2.0
                assert diag["display_gap"] == pytest.approx(x * (x + 2), rel=1e-9)


def test_hessian_curves():
    rows = real_curve_rows(u_max=6.0, count=121)
    for u, h0, h1, lower in rows:
        assert h1 >= h0
        assert lower <= h0 + 1e-12
        assert h0 > 0
    assert rows[0][3] == pytest.approx(rows[0][1], rel=1e-13)


def test_imaginary_factorization_sign():
    for v in (0.05, 0.2, 0.49):
        h0 = hessian_multiplier_H(SpectralPoint(2.25 - (0.5 - v) ** 2, 4, 0))
        assert h0_imaginary_factored(v) == pytest.approx(h0, rel=1e-10)
        assert h0_imaginary_quoted(v) == pytest.approx(-h0, rel=1e-10)
        assert h0 > 0


def test_obstruction_multiplier_values():
    assert obstruction_multiplier(2.0) == 0.0
    assert obstruction_multiplier(0.0) == 0.0
    assert obstruction_multiplier(4.0) == -0.5
    for gamma in (1.3, 7.0):
        assert obstruction_multiplier(gamma) == pytest.approx(-gamma * (gamma - 2) / 16, rel=1e-15)
    with pytest.raises(ArgumentError):
        obstruction_multiplier(2.0, n=3)


@given(st.lists(st.floats(2.01, 12.0), min_size=2, max_size=8), st.integers(0, 1), st.integers(0, 2**31))
def test_multiplier_self_adjoint_in_eigencoordinates(gammas, parity, seed):
    points = [SpectralPoint(g, 4, parity) for g in gammas]
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, len(points)))
    for name in ("G", "H", "ObsMult"):
        op = get_multiplier(name).operator(points)
        assert abs(a @ op @ b - b @ op @ a) < 1e-9 * max(1.0, np.max(np.abs(op)))


def test_enclosures_contain_values():
    for name, n in (("G", 4), ("H", 4), ("F", 3), ("ObsMult", 4)):
        mult = get_multiplier(name)
        for point in (_real(0.0, n), _real(1.3, n, 1), _imag(0.3, n)):
            assert mult.enclosure(point).contains(mult.eval(point)), name


# cylinder blocks


def _profile_mode(block, eigenvalue, values_fn, t0=-6.0, t1=6.0, count=161):
    t = chebyshev_nodes(t0, t1, count)
    return CylinderMode(block, eigenvalue, t, values_fn(t))


@pytest.mark.parametrize("block", ["u", "xi", "r"])
def test_substitution_gives_reduced_equation(block):
    n, eigenvalue = 4, 1.7
    power = substitution_power(block, n)

    def reduced(t):
        return np.exp(-(t**2)) * (1 + 0.3 * t)

    # cosh^{-k} has poles at +-i pi/2, so a short interval needs many nodes; the floor
    # left is rounding amplified by the N^4 growth of Chebyshev second derivatives
    mode = _profile_mode(block, eigenvalue, lambda t: np.cosh(t) ** power * reduced(t), -4.0, 4.0, 141)
    out = cylinder_linop_apply(mode)
    t = mode.t
    w = reduced(t)
    w2 = np.exp(-(t**2)) * ((4 * t**2 - 2) * (1 + 0.3 * t) - 1.2 * t)
    expected = np.cosh(t) ** power * (-w2 + reduced_potential(block, n, eigenvalue, t) * w)
    assert np.max(np.abs(out.values - expected)) < 1e-9 * np.max(np.abs(expected))


def test_indicial_roots():
    assert indicial_roots("u", 4) == pytest.approx((-2.0, 2.0))
    assert indicial_roots("u", 6) == pytest.approx((-3.0, 3.0))
    assert indicial_roots("xi", 4) == pytest.approx((-2.0, 2.0))


@pytest.mark.parametrize("block", ["u", "xi", "r"])
def test_block_operator_is_self_adjoint(block):
    # Gaussian decay beats the e^{(n+4)|t|} weight, so boundary terms vanish
    a = _profile_mode(block, 2.3, lambda t: np.exp(-2 * t**2) * (1 + t))
    b = _profile_mode(block, 2.3, lambda t: np.exp(-1.6 * t**2) * np.cos(t))
    left = weighted_pairing(cylinder_linop_apply(a), b)
    right = weighted_pairing(a, cylinder_linop_apply(b))
    assert abs(left - right) < 1e-10 * max(1.0, abs(left))


def test_no_decaying_u_or_xi_modes():
    for block in ("u", "xi"):
        for eigenvalue in (0.0, 2.0):
            assert dirichlet_ground_energy(block, 4, eigenvalue) > 1.0
    assert dirichlet_ground_energy("u", 4, 0.0) == pytest.approx(3.0, abs=1e-4)


def test_mode_validation():
    t = chebyshev_nodes(0, 1, 8)
    with pytest.raises(ArgumentError):
        CylinderMode("w", 0.0, t, t)
    with pytest.raises(ArgumentError):
        CylinderMode("r", 0.0, np.linspace(0, 1, 8), t).interpolant()


# certificate


@pytest.fixture(scope="module")
def certificate():
    start = time.perf_counter()
    cert = positivity_certificate()
    return cert, time.perf_counter() - start


def test_certificate_verdict(certificate):
    cert, elapsed = certificate
    assert cert.certified, cert.failures
    assert elapsed < 30
    assert -3.468 < cert.a_zero.lo and cert.a_zero.hi < -3.467
    lowers = [step.a_lower for step in cert.ladder]
    assert all(b > a for a, b in zip(lowers, lowers[1:]))
    assert lowers[-1] >= 0 or cert.ladder[-1].u_end >= cert.tail_threshold
    assert all(step.p_end_lower > 0 for step in cert.ladder)
    assert all(cell.g_lower > 0 for cell in cert.imaginary)
    assert cert.c0.hi > -4 and cert.c0.lo > -4
    assert "verdict: certified" in cert.serialize()


def test_first_ladder_step(certificate):
    cert, _ = certificate
    a0 = -3.468
    # largest positive root of a0 x (x + 2) + x^2 + 2
    roots = np.roots([a0 + 1, 2 * a0, 2.0])
    x1 = max(r.real for r in roots if r.real > 0)
    step = cert.ladder[0]
    assert step.a_lower == a0
    assert step.u_end == pytest.approx(math.sqrt(x1 - 0.25), rel=1e-8)


def test_spot_check(certificate):
    cert, _ = certificate
    report = spot_check(cert, count=2000, seed=1)
    assert report["non_positive"] == 0
    assert report["real_min"] > 0 and report["imaginary_min"] > 0
