"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Run standalone with ``python tests/test_acceptance.py`` to get only the eleven lines.
"""

import functools
import math
import time

import numpy as np
import pytest

from renvol import chart_geometry as cg
from renvol import conformal_functionals as cf
from renvol import fg_expansion as fe
from renvol import warped_models as wm
from renvol.chart_geometry import ChartMetric, random_scalar, random_sym_field, tt_project, tt_residuals
from renvol.fuchsian_spectral import (
    SpectralPoint,
    g_from_scattering,
    get_multiplier,
    hessian_multiplier_H,
    positivity_certificate,
    spot_check,
)


def _line(number, passed, detail):
    return f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"


@pytest.fixture
def report(capsys):
    def emit(number, result):
        with capsys.disabled():
            print("\n" + _line(number, result["passed"], result["detail"]))
    return emit


def _max(a):
    return float(np.max(np.abs(a)))


# 1. Einstein closed forms


@functools.lru_cache(maxsize=None)
def criterion_1():
    start = time.perf_counter()
    worst = 0.0
    for n in (2, 4):
        for lam in (-1.0, -2.0, 1.0):
            fg = fe.solve_fg(ChartMetric.einstein(n, lam), order=4)
            h0 = fg.h0.components
            worst = max(worst, _max(fg.coefficient(2) + lam / 2 * h0),
                        _max(fg.coefficient(4) - lam**2 / 16 * h0))
            for j in (1, 2):
                closed = math.comb(n, j) * (-lam / 4) ** j
                worst = max(worst, abs(float(fg.volume.coeff(2 * j)) - closed))
    elapsed = time.perf_counter() - start
    return {"passed": worst < 1e-12 and elapsed < 1.0,
            "detail": f"max coefficient error {worst:.2e} (tol 1e-12), {elapsed:.2f} s (limit 1 s)"}


def test_criterion_1(report):
    result = criterion_1()
    report(1, result)
    assert result["passed"]


# 2. volume-coefficient identities


@functools.lru_cache(maxsize=None)
def criterion_2():
    start = time.perf_counter()
    c = {"v2": 0.0, "v4": 0.0, "first": 0.0, "second_n2": 0.0, "second_n4": 0.0, "second_n4_log": 0.0}
    for seed in range(10):
        m2 = ChartMetric.random(2, 64, seed=seed, amplitude=0.1, max_mode=2)
        fg2 = fe.solve_fg(m2, order=6, diagnostics=False)
        closed = fe.volume_closed_forms(fg2)
        ti = fe.trace_identities(fg2)
        c["v2"] = max(c["v2"], _max(fg2.volume.coeff(2) - closed[2]))
        c["first"] = max(c["first"], _max(ti["first"]))
        c["second_n2"] = max(c["second_n2"], _max(ti["second"]))

        m4 = ChartMetric.random(4, 16, seed=seed, amplitude=0.02, max_mode=1)
        fg4 = fe.solve_fg(m4, order=4, diagnostics=False)
        closed = fe.volume_closed_forms(fg4)
        ti = fe.trace_identities(fg4)
        c["v2"] = max(c["v2"], _max(fg4.volume.coeff(2) - closed[2]))
        c["v4"] = max(c["v4"], _max(fg4.volume.coeff(4) - closed[4]))
        c["first"] = max(c["first"], _max(ti["first"]))
        # the H6 identity needs order 6; 8^4 keeps it inside the time budget
        fg6 = fe.solve_fg(ChartMetric.random(4, 8, seed=seed, amplitude=0.02, max_mode=1), order=6,
                          diagnostics=False)
        ti6 = fe.trace_identities(fg6)
        c["second_n4"] = max(c["second_n4"], _max(ti6["second"]))
        c["second_n4_log"] = max(c["second_n4_log"], _max(ti6["second_with_log_term"]))
    elapsed = time.perf_counter() - start
    supported = max(v for k, v in c.items() if k != "second_n4") < 1e-8 and elapsed < 120
    literal = c["second_n4"] < 1e-8
    detail = (f"v2 {c['v2']:.1e}, v4 {c['v4']:.1e}, first trace identity {c['first']:.1e}, "
              f"second trace identity n=2 {c['second_n2']:.1e}, n=4 literal {c['second_n4']:.1e} "
              f"(with -Tr(H2 K)/3 term {c['second_n4_log']:.1e}); tol 1e-8, {elapsed:.0f} s (limit 120 s)")
    return {"passed": supported and literal, "supported": supported, "literal": literal, "detail": detail,
            **c, "elapsed": elapsed}


def test_criterion_2(report):
    result = criterion_2()
    report(2, result)
    assert result["supported"]


@pytest.mark.xfail(strict=True, reason="the literal H6 trace identity omits the obstruction cross term at n = 4")
def test_criterion_2_literal_second_identity_at_n4():
    assert criterion_2()["literal"]


# 3. conformal invariance of the total anomaly


@functools.lru_cache(maxsize=None)
def criterion_3():
    changes = {}
    m2 = ChartMetric.random(2, 64, seed=11, amplitude=0.1, max_mode=2)
    omega = random_scalar(m2.grid.shape, seed=12, amplitude=0.2, max_mode=2)
    before = m2.integrate(cf.vn_of(m2))
    other = m2.conformal(omega)
    density = cf.vn_of(other)
    # on a torus the total vanishes, so measure against the integral of |v2|
    scale2 = other.integrate(np.abs(density))
    jump2 = abs(other.integrate(density) - before)
    changes[2] = jump2 / scale2
    m4 = ChartMetric.random(4, 12, seed=13, amplitude=0.03, max_mode=1)
    omega = random_scalar(m4.grid.shape, seed=14, amplitude=0.05, max_mode=1)
    before = m4.integrate(cf.vn_of(m4))
    other = m4.conformal(omega)
    changes[4] = abs(other.integrate(cf.vn_of(other)) - before) / abs(before)
    worst = max(changes.values())
    return {"passed": worst < 1e-6,
            "detail": f"relative change n=2 {changes[2]:.1e} (|change| {jump2:.1e} against int|v2| "
                      f"{scale2:.3g}), n=4 {changes[4]:.1e} (tol 1e-6)"}


def test_criterion_3(report):
    result = criterion_3()
    report(3, result)
    assert result["passed"]


# 4. Polyakov / Riesz cross-check


@functools.lru_cache(maxsize=None)
def criterion_4():
    area, lam = 4 * math.pi, -1.0
    end = wm.EndModel.einstein(2, lam, area)
    interior = wm.fuchsian_interior_volume(2, area)
    base = wm.riesz_volume(end, interior)
    fg = fe.solve_fg(ChartMetric.einstein(2, lam))
    shift_gap = 0.0
    for c in (0.3, -0.2, 0.05):
        moved = wm.riesz_volume(end.rescaled(c), lambda x0, c=c: interior(x0 * math.exp(-c)))
        expected = float(cf.conformal_volume_shift(fg, np.asarray(c), volume=area))
        shift_gap = max(shift_gap, abs(moved.finite_part - base.finite_part - expected))
    residue_gap = abs(base.residue - area * float(fg.volume.coeff(2)))
    chi = lam * area / (2 * math.pi)
    detail = (f"Polyakov gap {shift_gap:.1e} (tol 1e-6), residue gap {residue_gap:.1e} (tol 1e-8); "
              f"residue {base.residue:.10g} = -pi chi {-math.pi * chi:.10g}, "
              f"not -(pi/2) chi {-0.5 * math.pi * chi:.10g}")
    return {"passed": shift_gap < 1e-6 and residue_gap < 1e-8, "detail": detail}


def test_criterion_4(report):
    result = criterion_4()
    report(4, result)
    assert result["passed"]


# 5. Hessian consistency


@functools.lru_cache(maxsize=None)
def criterion_5():
    worst = 0.0
    for n, res in ((2, 32), (4, 8)):
        metric = ChartMetric.random(n, res, seed=21, amplitude=0.05, max_mode=1)
        fg = fe.solve_fg(metric, order=n, diagnostics=False)
        hess = cf.vn_hessian(fg)
        for k in range(5):
            omega = random_scalar(metric.grid.shape, seed=30 + k, amplitude=0.1, max_mode=1)
            closed = float(hess.quadratic(omega))
            fd = float(cf.hessian_second_difference(fg, omega, eps=1e-4))
            worst = max(worst, abs(closed - fd) / abs(fd))
    model = fe.solve_fg(ChartMetric.einstein(4, -1.0), order=4)
    tensor = cf.vn_hessian(model).tensor
    einstein_gap = _max(tensor + 3 / 8 * np.linalg.inv(model.h0.components))
    return {"passed": worst < 1e-5 and einstein_gap < 1e-12,
            "detail": f"max relative gap {worst:.1e} over 10 directions (tol 1e-5); "
                      f"Einstein n=4 Hess + (3/8) h0^-1 = {einstein_gap:.1e}"}


def test_criterion_5(report):
    result = criterion_5()
    report(5, result)
    assert result["passed"]


# 6. anomaly constraints


@functools.lru_cache(maxsize=None)
def criterion_6():
    metric = ChartMetric.flat(4, 8)
    tt = tt_project(metric, random_sym_field(metric, seed=41, amplitude=0.1, max_mode=1))
    fg = fe.solve_fg(metric, neumann=tt.full, order=4)
    res = cf.anomaly_tensors(fg)["residuals"]
    model = cf.anomaly_tensors(fe.solve_fg(ChartMetric.einstein(4, -1.0), order=4))
    g_gap = _max(model["G"] - 3 / 64 * np.eye(4))
    rep = model["einstein_report"]
    detail = (f"|Tr G4 - v4/2| {res['trace']:.1e}, |div G4| {res['divergence']:.1e} (tol 1e-7); "
              f"G4 - (3/64) h0 {g_gap:.1e}; F4 Einstein multiple {rep['F_multiple_computed']:g} "
              f"computed vs {rep['F_multiple_quoted']:g} quoted")
    return {"passed": res["trace"] < 1e-7 and res["divergence"] < 1e-7 and g_gap < 1e-12, "detail": detail}


def test_criterion_6(report):
    result = criterion_6()
    report(6, result)
    assert result["passed"]


# 7. uniformization


@functools.lru_cache(maxsize=None)
def criterion_7():
    torus = ChartMetric.random_conformal(2, 32, seed=51, amplitude=0.2, max_mode=2)
    surf = cf.uniformize_flow(torus, tol=1e-10, max_steps=200)
    scal = _max(cg.ricci_scalar(surf.metric))
    model = cf.SpherePairModel(nodes=16)
    start = model.axisymmetric_function(seed=52, amplitude=0.01)
    newton = cf.uniformize_flow(model, tol=1e-10, max_steps=30, omega_init=start)
    ok = scal < 1e-8 and newton.residual < 1e-8 and newton.steps <= 30
    return {"passed": ok,
            "detail": f"n=2 sup|Scal| {scal:.1e} after {surf.steps} steps; n=4 sup|v4 - mean| "
                      f"{newton.residual:.1e} after {newton.steps} Newton steps (tol 1e-8, cap 30)"}


def test_criterion_7(report):
    result = criterion_7()
    report(7, result)
    assert result["passed"]


# 8. Schlafli


@functools.lru_cache(maxsize=None)
def criterion_8():
    ball = max(r.gap for _, r in wm.schlafli_check(wm.HyperbolicBallFamily(), np.linspace(-0.5, 1.0, 10)))
    diffeo = max(r.gap for _, r in wm.schlafli_check(wm.BallDiffeomorphismFamily(), np.linspace(-0.5, 0.5, 10)))
    return {"passed": ball < 1e-8 and diffeo < 1e-10,
            "detail": f"hyperbolic-ball gap {ball:.1e} over 10 values (tol 1e-8); "
                      f"diffeomorphism gap {diffeo:.1e} (tol 1e-10)"}


def test_criterion_8(report):
    result = criterion_8()
    report(8, result)
    assert result["passed"]


# 9. spectral oracle equivalence


def _oracle_gammas(n, branch, points=20):
    threshold = (n - 1) ** 2 / 4
    if branch == "real":
        return threshold + np.linspace(0.1, 2.5, points) ** 2
    top = 0.48 if n == 4 else 0.95
    return threshold - np.linspace(0.02, top, points) ** 2


@functools.lru_cache(maxsize=None)
def criterion_9():
    worst = 0.0
    assembly = 0.0
    for n, names in ((3, ("F",)), (4, ("G", "ObsMult"))):
        for branch in ("real", "imaginary"):
            for gamma in _oracle_gammas(n, branch):
                for parity in (0, 1):
                    point = SpectralPoint(float(gamma), n, parity)
                    for name in names:
                        mult = get_multiplier(name)
                        closed = float(mult.eval(point))
                        worst = max(worst, abs(closed - float(mult.oracle(point))) / (1 + abs(closed)))
                    if n == 4 and branch == "real":
                        h = hessian_multiplier_H(point)
                        u2 = point.u_squared
                        independent = -32 * g_from_scattering(point) + (u2 + 0.25) * (u2 + 2.25) + 2
                        display = hessian_multiplier_H(point, diagnostics=True)["display_with_one"]
                        assembly = max(assembly, abs(h - independent), abs(h - display))
    return {"passed": worst < 1e-6 and assembly < 1e-10,
            "detail": f"max oracle gap {worst:.1e} (tol 1e-6, 20 points per branch); "
                      f"assembly identity {assembly:.1e} (tol 1e-10)"}


def test_criterion_9(report):
    result = criterion_9()
    report(9, result)
    assert result["passed"]


# 10. positivity certificate


@functools.lru_cache(maxsize=None)
def criterion_10():
    start = time.perf_counter()
    cert = positivity_certificate()
    elapsed = time.perf_counter() - start
    spots = spot_check(cert, count=10_000, seed=0)
    box = cert.a_zero
    ok = (cert.verdict == "certified" and -3.468 < box.lo and box.hi < -3.467 and elapsed < 30
          and spots["non_positive"] == 0)
    return {"passed": ok,
            "detail": f"verdict {cert.verdict}, {len(cert.ladder)} ladder steps, {len(cert.imaginary)} "
                      f"imaginary cells, a(0) in [{box.lo:.10f}, {box.hi:.10f}], {elapsed:.2f} s (limit 30 s), "
                      f"{spots['non_positive']} non-positive of {spots['count']} spot checks"}


def test_criterion_10(report):
    result = criterion_10()
    report(10, result)
    assert result["passed"]


# 11. projector and self-adjointness


@functools.lru_cache(maxsize=None)
def criterion_11():
    tt_worst = 0.0
    for seed in range(10):
        dim, res = ((2, 16), (3, 8))[seed % 2]
        m = ChartMetric.random(dim, res, seed=60 + seed, amplitude=0.1, max_mode=1)
        once = tt_project(m, random_sym_field(m, seed=70 + seed, amplitude=1.0, max_mode=1))
        twice = tt_project(m, once)
        tt_worst = max(tt_worst, *tt_residuals(m, once), _max(once.full - twice.full))

    fg = fe.solve_fg(ChartMetric.random(4, 8, seed=5, amplitude=0.03, max_mode=1), order=4, diagnostics=False)
    hess = cf.vn_hessian(fg)
    m = fg.h0
    adj = 0.0
    for seed in range(3):
        f = random_scalar(m.grid.shape, seed=80 + seed, amplitude=1.0, max_mode=1)
        g = random_scalar(m.grid.shape, seed=90 + seed, amplitude=1.0, max_mode=1)
        left = m.integrate(cf.linearized_vn(fg, f, hess) * g)
        right = m.integrate(f * cf.linearized_vn(fg, g, hess))
        adj = max(adj, abs(left - right) / max(abs(left), 1e-300))

    rng = np.random.default_rng(7)
    mult = 0.0
    for name, n, gammas in (("G", 4, rng.uniform(2.05, 12.0, 12)), ("H", 4, rng.uniform(2.05, 12.0, 12)),
                            ("ObsMult", 4, rng.uniform(0.0, 12.0, 12)), ("F", 3, rng.uniform(0.1, 12.0, 12))):
        for parity in (0, 1):
            op = get_multiplier(name).operator([SpectralPoint(float(g), n, parity) for g in gammas])
            a, b = rng.standard_normal((2, len(gammas)))
            mult = max(mult, abs(a @ op @ b - b @ op @ a) / max(1.0, _max(op)))
    return {"passed": tt_worst < 1e-8 and adj < 1e-9 and mult < 1e-9,
            "detail": f"TT idempotence/constraints {tt_worst:.1e} on 10 metrics (tol 1e-8); "
                      f"linearized v4 self-adjointness {adj:.1e}, multipliers {mult:.1e} (tol 1e-9)"}


def test_criterion_11(report):
    result = criterion_11()
    report(11, result)
    assert result["passed"]


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


if __name__ == "__main__":
    for number, fn in enumerate(CRITERIA, start=1):
        result = fn()
        print(_line(number, result["passed"], result["detail"]), flush=True)
