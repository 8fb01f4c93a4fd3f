import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from renvol import conformal_functionals as cf
from renvol import fg_expansion as fe
from renvol import warped_models as wm
from renvol.chart_geometry import ChartMetric
from renvol.errors import ArgumentError, DomainError

PROBES = np.linspace(-3.0, 3.0, 13)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_fuchsian_warp_is_einstein(n):
    w = wm.WarpedMetric(ChartMetric.einstein(n, -1.0))
    assert w.fuchsian
    rep = wm.warped_curvature(w, PROBES)
    assert rep.einstein_residual < 1e-10
    assert rep.rxtt_residual < 1e-12
    # an Einstein base alone does not fix the tangential sectional curvatures
    assert (rep.max_sectional is None) == (n > 2)
    hyperbolic = wm.warped_curvature(wm.WarpedMetric(ChartMetric.constant_curvature(n, -1.0)), PROBES)
    assert hyperbolic.einstein_residual < 1e-10
    assert hyperbolic.max_sectional <= 0.0


def test_flat_base_residual_matches_direct_evaluation():
    w = wm.WarpedMetric(ChartMetric.einstein(2, 0.0))
    rep = wm.warped_curvature(w, PROBES)
    # tangential block reduces to (n - 1)/cosh^2 for a Ricci-flat base
    assert rep.tangential_residual == pytest.approx(1.0, rel=1e-12)
    assert rep.normal_residual < 1e-12


def test_sampled_warp_tracks_the_analytic_one():
    ts = np.linspace(-4, 4, 801)
    w = wm.WarpedMetric(ChartMetric.einstein(2, -1.0), warp=(ts, np.cosh(ts)))
    assert not w.fuchsian
    assert wm.warped_curvature(w, PROBES).einstein_residual < 1e-4
    with pytest.raises(ArgumentError):
        wm.warped_curvature(w, [5.0])
    with pytest.raises(DomainError):
        wm.WarpedMetric(ChartMetric.einstein(2, -1.0), warp=(ts, np.sinh(ts)))


def test_callable_warp():
    w = wm.WarpedMetric(ChartMetric.einstein(2, -1.0), warp=np.cosh)
    assert wm.warped_curvature(w, PROBES).einstein_residual < 1e-8


def test_fuchsian_metric_in_x_is_the_exact_end():
    report = wm.fuchsian_end_match(np.linspace(0.05, 1.5, 40))
    assert report["sampled"] < 1e-13
    assert report["termwise"] == 0.0


def test_surface_residue_is_half_the_area():
    area = 4 * math.pi
    rv = wm.riesz_volume(wm.EndModel.einstein(2, -1.0, area), wm.fuchsian_interior_volume(2, area))
    assert rv.residue == pytest.approx(area / 2, rel=1e-14)
    assert rv.residue_hadamard == pytest.approx(area / 2, rel=1e-8)
    assert rv.riesz_hadamard_gap < 1e-8


def test_constant_end_has_no_residue():
    rv = wm.riesz_volume(wm.EndModel.constant(2))
    assert rv.residue == 0.0
    # FP of int_0^x0 x^{-3} dx is the naive antiderivative at x0
    assert rv.finite_part == pytest.approx(-0.5 / wm.SPLIT_POINT**2, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("lam", [-1.0, -2.0, 1.0])
def test_riesz_agrees_with_hadamard_and_contour(n, lam):
    end = wm.EndModel.einstein(n, lam)
    rv = wm.riesz_volume(end)
    assert rv.riesz_hadamard_gap < 1e-8
    assert abs(rv.contour_finite_part - rv.finite_part) < 1e-10
    if n % 2 == 0:
        assert rv.residue == pytest.approx(end.coefficient(n), abs=1e-15)


def test_residue_is_integral_of_v2():
    lam, area = -1.0, 4 * math.pi
    fg = fe.solve_fg(ChartMetric.einstein(2, lam))
    rv = wm.riesz_volume(wm.EndModel.einstein(2, lam, area))
    assert abs(rv.residue - area * fg.volume.coeff(2)) < 1e-8
    chi = lam * area / (2 * math.pi)
    assert rv.residue == pytest.approx(-math.pi * chi, rel=1e-14)
    assert abs(rv.residue + 0.5 * math.pi * chi) > 1.0


@pytest.mark.parametrize("shift", [0.3, -0.2, 0.05])
def test_polyakov_shift_on_the_exact_end(shift):
    area = 4 * math.pi
    end = wm.EndModel.einstein(2, -1.0, area)
    interior = wm.fuchsian_interior_volume(2, area)
    base = wm.riesz_volume(end, interior)
    moved = wm.riesz_volume(end.rescaled(shift), lambda x0: interior(x0 * math.exp(-shift)))
    fg = fe.solve_fg(ChartMetric.einstein(2, -1.0))
    expected = cf.conformal_volume_shift(fg, np.asarray(shift), volume=area)
    assert abs((moved.finite_part - base.finite_part) - expected) < 1e-6


def test_rescaling_needs_an_einstein_end():
    end = wm.EndModel(2, lambda x: 1 + x**3, [1.0, 0.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        end.rescaled(0.1)
    # polynomial tail formed exactly from the extra coefficient
    assert end.tail(0.25) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 3])
def test_schlafli_hyperbolic_balls(n):
    fam = wm.HyperbolicBallFamily(n=n)
    for _, res in wm.schlafli_check(fam, np.linspace(-0.4, 0.9, 10)):
        assert res.gap < 1e-8 * max(1.0, abs(res.lhs))
        assert res.volume_term != 0.0


def test_schlafli_diffeomorphism_family():
    for _, res in wm.schlafli_check(wm.BallDiffeomorphismFamily(), np.linspace(-0.5, 0.5, 5)):
        assert abs(res.lhs) < 1e-10
        assert res.gap < 1e-10


def test_schlafli_fuchsian_cylinder():
    for n in (2, 4):
        for _, res in wm.schlafli_check(wm.FuchsianCylinderFamily(n=n), [0.0, 0.3]):
            assert res.gap < 1e-8 * max(1.0, abs(res.lhs))


def test_schlafli_errors():
    with pytest.raises(DomainError):
        wm.schlafli_terms(wm.HyperbolicBallFamily(kappa0=0.0))
    with pytest.raises(ArgumentError):
        wm.family_from_spec({"family": "torus"})
    fam = wm.family_from_spec({"family": "hyperbolic_ball", "params": {"radius": 0.5}})
    assert fam.describe()["radius"] == 0.5


def test_qf_identities_exact_when_k_vanishes():
    rep = wm.qf_model_identities_n2(np.eye(2), np.zeros((2, 2)))
    assert rep["trace_h2"] == pytest.approx(1.0, abs=1e-15)
    assert rep["hminus_dot_error"] < 1e-12
    assert rep["hminus_ddot_error"] < 1e-9
    assert rep["k_norm_sq"] == 0.0


@given(
    st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
    st.floats(0.5, 2.0), st.floats(-0.3, 0.3),
)
def test_qf_identities_random(diag, off, scale, skew):
    h0 = np.array([[scale, skew], [skew, 1.0]])
    h0inv = np.linalg.inv(h0)
    raw = np.array([[diag, off], [off, -diag]])
    k = raw - 0.5 * np.trace(h0inv @ raw) * h0
    rep = wm.qf_model_identities_n2(h0, k)
    assert abs(rep["trace_h2"] - 1.0) < 1e-5 * max(1.0, rep["k_norm_sq"])
    assert abs(rep["trace_linear_coefficient"]) < 1e-7
    assert rep["hminus_dot_error"] < 1e-7
    assert rep["hminus_ddot_error"] < 1e-7 * max(1.0, np.max(np.abs(k)) ** 2)
    if rep["k_norm_sq"] > 1e-3:
        # pointwise s^2 coefficient of the area-normalized shift: |k|^2 / 2
        assert rep["volume_shift_ratio_to_k_norm_sq"] == pytest.approx(0.5, rel=1e-4)


def test_qf_rejects_trace():
    with pytest.raises(ArgumentError):
        wm.qf_model_identities_n2(np.eye(2), np.eye(2))
