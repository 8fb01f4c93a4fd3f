"""Command-line experiment runner.

    renvol <subcommand> [--config PATH] [--out DIR] [--param value ...]

Each run writes its tables and figures into ``--out`` together with a
``manifest.json`` recording every parameter actually used, each check with
its tolerance, and machine-readable error records.  Exit status is 0 on
success, 2 when a check fails or a computation raises, 3 on a bad config.
"""

from __future__ import annotations

import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap():
    # must run before numpy loads its BLAS
    raw = os.environ.get("RENVOL_THREADS")
    if raw is None:
        return None
    try:
        threads = int(raw)
    except ValueError:
        return raw
    if threads >= 1:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)
    return threads


_THREADS = _apply_thread_cap()

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import platform  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .errors import ArgumentError, ConfigError, RenvolError  # noqa: E402

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 2, 3


# ---------------------------------------------------------------------------
# parameters


class Param:
    def __init__(self, kind, default, help_text="", choices=None):
        self.kind = kind
        self.default = default
        self.help = help_text
        self.choices = choices

    def coerce(self, name, value):
        try:
            if self.kind == "list":
                if isinstance(value, str):
                    value = [v for v in value.split(",") if v.strip()]
                return [float(v) for v in value]
            if self.kind == "intlist":
                if isinstance(value, str):
                    value = [v for v in value.split(",") if v.strip()]
                return [int(v) for v in value]
            if self.kind is bool and isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            if self.kind is int and isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            out = self.kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError("parameter has the wrong type", parameter=name, value=value,
                              expected=getattr(self.kind, "__name__", self.kind)) from exc
        if self.choices is not None and out not in self.choices:
            raise ConfigError("parameter outside its allowed values", parameter=name, value=out,
                              choices=list(self.choices))
        return out


COMMON = {
    "out": Param(str, "renvol_out", "output directory"),
    "seed": Param(int, 0, "seed for randomized inputs"),
}

SCHEMAS = {
    "fg-expand": {
        "model": Param(str, "einstein", "boundary metric", ("einstein", "flat", "random", "conformal", "spec")),
        "n": Param(int, 4, "boundary dimension"),
        "lambda": Param(float, -1.0, "Einstein constant of the model base"),
        "resolution": Param(int, 16, "grid points per axis"),
        "order": Param(int, 0, "truncation order (0 means n)"),
        "amplitude": Param(float, 0.05, "random perturbation amplitude"),
        "max_mode": Param(int, 1, "highest Fourier mode of random data"),
        "metric": Param(str, "", "metric-spec JSON (model=spec)"),
        "cg_tol": Param(float, 1e-13, "inner solve tolerance"),
        "tol": Param(float, 1e-8, "closed-form check tolerance (1e-12 for models)"),
    },
    "volume": {
        "lambda": Param(float, -1.0, "Einstein constant of the surface"),
        "base_volume": Param(float, 4 * math.pi, "area of the boundary surface"),
        "shifts": Param("list", [0.3, -0.2], "constant conformal shifts"),
        "tol": Param(float, 1e-6, "finite-part difference tolerance"),
        "residue_tol": Param(float, 1e-8, "residue tolerance"),
    },
    "hessian": {
        "n": Param(int, 4, "boundary dimension", (2, 4)),
        "resolution": Param(int, 0, "grid points per axis (0: 32 for n=2, 8 for n=4)"),
        "count": Param(int, 5, "number of random conformal directions"),
        "amplitude": Param(float, 0.05, "metric perturbation amplitude"),
        "omega_amplitude": Param(float, 0.1, "direction amplitude"),
        "eps": Param(float, 1e-4, "finite-difference step"),
        "tol": Param(float, 1e-5, "relative tolerance"),
        "einstein_tol": Param(float, 1e-12, "Einstein constant tolerance"),
    },
    "flow": {
        "n": Param(int, 2, "boundary dimension", (2, 4)),
        "resolution": Param(int, 32, "grid points per axis (n=2) or Gauss nodes (n=4)"),
        "amplitude": Param(float, 0.0, "initial bump amplitude (0: 0.2 for n=2, 0.01 for n=4)"),
        "tol": Param(float, 1e-10, "stopping residual"),
        "max_steps": Param(int, 0, "iteration cap (0: 200 for n=2, 30 for n=4)"),
        "check_tol": Param(float, 1e-8, "required final residual"),
    },
    "anomaly": {
        "resolution": Param(int, 8, "grid points per axis"),
        "tt_amplitude": Param(float, 0.1, "random TT Neumann amplitude"),
        "lambda": Param(float, -1.0, "Einstein constant for the model report"),
        "tol": Param(float, 1e-7, "constraint tolerance"),
    },
    "schlafli": {
        "family": Param(str, "hyperbolic_ball", "Einstein family", ("hyperbolic_ball", "ball_diffeomorphism",
                                                                    "fuchsian_cylinder")),
        "family_n": Param(int, 2, "family dimension"),
        "params": Param("list", [0.1 * k for k in range(10)], "parameter values"),
        "tol": Param(float, 1e-8, "gap tolerance"),
    },
    "spectrum": {
        "n": Param(int, 4, "dimension (n = 4 only)", (4,)),
        "u_max": Param(float, 1.5, "real-branch range"),
        "imag": Param(float, 0.5, "imaginary-branch range"),
        "count": Param(int, 301, "real-branch samples"),
        "imag_count": Param(int, 201, "imaginary-branch samples"),
        "pole_margin": Param(float, 1e-3, "distance kept from the H1 pole"),
    },
    "certify": {
        "u_max": Param(float, 0.0, "real-branch bound (0: ladder plus monotone tail)"),
        "max_steps": Param(int, 500, "ladder step cap"),
        "depth_cap": Param(int, 20, "bisection depth cap"),
        "initial_cells": Param(int, 16, "initial imaginary cells"),
        "spot_count": Param(int, 10000, "random spot checks"),
        "spot_u_range": Param(float, 60.0, "real spot-check range"),
        "runtime_limit": Param(float, 30.0, "seconds allowed for the certificate"),
    },
    "oracle": {
        "dims": Param("intlist", [3, 4], "dimensions"),
        "points": Param(int, 20, "grid points per branch"),
        "tol": Param(float, 1e-6, "relative tolerance 1e-6 (1 + |value|)"),
        "assembly_tol": Param(float, 1e-10, "assembly identity tolerance"),
    },
}


def resolve(subcommand, config_path=None, overrides=None):
    """Schema defaults < config file < flag overrides; unknown keys are config errors."""
    if subcommand not in SCHEMAS:
        raise ConfigError("unknown subcommand", subcommand=subcommand, known=sorted(SCHEMAS))
    schema = {**COMMON, **SCHEMAS[subcommand]}
    values = {name: p.default for name, p in schema.items()}
    sources = {name: "default" for name in schema}
    layers = []
    if config_path:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("cannot read config", path=str(config_path), reason=str(exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", path=str(config_path))
        named = data.pop("subcommand", subcommand)
        if named != subcommand:
            raise ConfigError("config names another subcommand", config=named, invoked=subcommand)
        layers.append(("config", data))
    layers.append(("flag", overrides or {}))
    for source, layer in layers:
        for key, value in layer.items():
            name = key.replace("-", "_")
            if name not in schema:
                raise ConfigError("unknown parameter", parameter=key, subcommand=subcommand)
            if value is None:
                continue
            values[name] = schema[name].coerce(name, value)
            sources[name] = source
    return values, sources


# ---------------------------------------------------------------------------
# run context


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else repr(val)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


class Run:
    def __init__(self, subcommand, params, sources, out):
        self.subcommand = subcommand
        self.params = params
        self.sources = sources
        self.out = Path(out)
        self.checks = []
        self.errors = []
        self.artifacts = []
        self.settings = {}
        self.notes = []

    def path(self, name):
        self.artifacts.append(name)
        return self.out / name

    def setting(self, **values):
        """Record tolerances and resolutions used internally."""
        self.settings.update(values)

    def check(self, name, value, tol, passed=None):
        value = float(value)
        ok = bool(value < tol) if passed is None else bool(passed)
        self.checks.append({"name": name, "value": value, "tolerance": tol, "passed": ok})
        return ok

    def note(self, text, **data):
        self.notes.append({"note": text, **data})

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks) and not self.errors

    def manifest(self, elapsed, status):
        return _jsonable({
            "subcommand": self.subcommand,
            "status": status,
            "renvol_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "threads": _THREADS,
            "parameters": self.params,
            "parameter_sources": self.sources,
            "settings": self.settings,
            "checks": self.checks,
            "notes": self.notes,
            "errors": self.errors,
            "artifacts": self.artifacts,
            "elapsed_seconds": elapsed,
        })


def _error_record(exc):
    return {"type": type(exc).__name__, "message": str(exc),
            "details": _jsonable(getattr(exc, "details", {}))}


# ---------------------------------------------------------------------------
# subcommands


def _mean(m, field):
    field = np.asarray(field)
    if m.is_grid:
        return float(m.integrate(field) / m.volume())
    return float(field)


def _fg_metric(p):
    from .chart_geometry import ChartMetric

    n, res = p["n"], p["resolution"]
    if p["model"] == "einstein":
        return ChartMetric.einstein(n, p["lambda"])
    if p["model"] == "flat":
        return ChartMetric.flat(n, res)
    if p["model"] == "random":
        return ChartMetric.random(n, res, seed=p["seed"], amplitude=p["amplitude"], max_mode=p["max_mode"])
    if p["model"] == "conformal":
        return ChartMetric.random_conformal(n, res, seed=p["seed"], amplitude=p["amplitude"],
                                            max_mode=p["max_mode"])
    if not p["metric"]:
        raise ConfigError("model=spec needs a metric-spec path", parameter="metric")
    try:
        return ChartMetric.from_spec(p["metric"])
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError("bad metric spec", path=p["metric"], reason=str(exc)) from exc


def cmd_fg_expand(run: Run):
    from . import fg_expansion as fe

    p = run.params
    metric = _fg_metric(p)
    n = metric.dim
    order = p["order"] or n
    run.setting(order=order, cg_tol=p["cg_tol"], resolution=None if not metric.is_grid else list(metric.resolution))
    fg = fe.solve_fg(metric, order=order, cg_tol=p["cg_tol"])
    fg.save(run.path("fg_expansion.json"))
    rows = []
    for j in range(0, n + 1, 2):
        rows.append((f"v{j}", _mean(metric, fg.volume.coeff(j))))
    closed = fe.volume_closed_forms(fg)
    for j in (2, 4):
        if j <= n:
            gap = float(np.max(np.abs(fg.volume.coeff(j) - closed[j])))
            rows.append((f"v{j}_closed_form_gap", gap))
            run.check(f"v{j} closed form", gap, p["tol"])
    if order >= 4:
        first = float(np.max(np.abs(fe.trace_identities(fg)["first"])))
        rows.append(("trace_identity_first", first))
        run.check("trace identity 4TrH4 - TrH2^2", first, p["tol"])
    if not metric.is_grid and metric.kind == "einstein":
        lam = p["lambda"] if p["model"] == "einstein" else metric.lam
        tol = 1e-12
        run.setting(model_tol=tol)
        for j in range(1, n // 2 + 1):
            exact = math.comb(n, j) * (-lam / 4) ** j
            gap = abs(float(fg.volume.coeff(2 * j)) - exact)
            rows.append((f"v{2 * j}_einstein_gap", gap))
            run.check(f"v{2 * j} Einstein closed form", gap, tol)
    res = fg.residuals or {}
    for key in ("trace_constraint", "div_constraint", "obstruction_trace", "obstruction_divergence"):
        if key in res:
            rows.append((key, float(res[key])))
    by_order = res.get("einstein_residual_by_order") or []
    if by_order:
        worst = max(max(abs(v) for k, v in r.items() if k != "order") for r in by_order)
        rows.append(("einstein_residual_max", float(worst)))
    write_csv(run.path("fg_table.csv"), ["quantity", "value"], rows)
    for name, value in rows:
        print(f"{name} = {_fmt(value)}")


def cmd_volume(run: Run):
    from . import conformal_functionals as cf
    from . import fg_expansion as fe
    from . import warped_models as wm
    from .chart_geometry import ChartMetric

    p = run.params
    lam, area = p["lambda"], p["base_volume"]
    end = wm.EndModel.einstein(2, lam, area)
    interior = wm.fuchsian_interior_volume(2, area) if lam == -1.0 else None
    run.setting(split_point=wm.SPLIT_POINT)
    base = wm.riesz_volume(end, interior)
    fg = fe.solve_fg(ChartMetric.einstein(2, lam))
    rows = []
    for c in p["shifts"]:
        shifted_interior = None
        if interior is not None:
            shifted_interior = (lambda shift: (lambda x0: interior(x0 * math.exp(-shift))))(c)
        rv = wm.riesz_volume(end.rescaled(c), shifted_interior)
        diff = rv.finite_part - base.finite_part
        shift = float(cf.conformal_volume_shift(fg, np.asarray(c), volume=area))
        gap = abs(diff - shift)
        rows.append((c, diff, shift, gap))
        run.check(f"Polyakov shift c={c:g}", gap, p["tol"])
    write_csv(run.path("polyakov.csv"), ["c", "riesz_difference", "conformal_shift", "gap"], rows)

    integral_v2 = area * float(fg.volume.coeff(2))
    chi = lam * area / (2 * math.pi)
    res_rows = [
        ("finite_part", base.finite_part),
        ("contour_finite_part", base.contour_finite_part),
        ("hadamard_finite_part", base.hadamard_finite_part),
        ("residue", base.residue),
        ("integral_v2", integral_v2),
        ("euler_characteristic", chi),
        ("minus_pi_chi", -math.pi * chi),
        ("minus_half_pi_chi", -0.5 * math.pi * chi),
    ]
    run.check("residue equals integral of v2", abs(base.residue - integral_v2), p["residue_tol"])
    run.note("residue discrepancy", residue=base.residue, minus_pi_chi=-math.pi * chi,
             minus_half_pi_chi=-0.5 * math.pi * chi,
             matches_minus_pi_chi=abs(base.residue + math.pi * chi) < p["residue_tol"],
             matches_minus_half_pi_chi=abs(base.residue + 0.5 * math.pi * chi) < p["residue_tol"])
    write_csv(run.path("riesz.csv"), ["quantity", "value"], res_rows)
    for name, value in res_rows:
        print(f"{name} = {_fmt(value)}")
    print(f"residue {base.residue:.12g} vs -pi chi {-math.pi * chi:.12g} vs -(pi/2) chi {-0.5 * math.pi * chi:.12g}")


def cmd_hessian(run: Run):
    from . import conformal_functionals as cf
    from . import fg_expansion as fe
    from .chart_geometry import ChartMetric, random_scalar

    p = run.params
    n = p["n"]
    res = p["resolution"] or (32 if n == 2 else 8)
    run.setting(resolution=res, order=n, eps=p["eps"], max_mode=1)
    metric = ChartMetric.random(n, res, seed=p["seed"], amplitude=p["amplitude"], max_mode=1)
    fg = fe.solve_fg(metric, order=n, diagnostics=False)
    hess = cf.vn_hessian(fg)
    rows = []
    for k in range(p["count"]):
        omega = random_scalar(metric.grid.shape, seed=p["seed"] + 1 + k, amplitude=p["omega_amplitude"],
                              max_mode=1)
        closed = float(hess.quadratic(omega))
        fd = float(cf.hessian_second_difference(fg, omega, eps=p["eps"]))
        rel = abs(closed - fd) / max(abs(fd), 1e-300)
        rows.append((k, closed, fd, rel))
        run.check(f"Hessian direction {k}", rel, p["tol"])
    lam = -1.0
    model = fe.solve_fg(ChartMetric.einstein(n, lam), order=n)
    model_hess = cf.vn_hessian(model)
    # Hess = c h0^{-1}: the multiple is read off the tensor against h0^{-1}
    computed = float(np.sum(model.h0.components * model_hess.tensor) / n)
    exact = cf.einstein_hessian_constant(n, lam)
    gap = abs(computed - exact)
    run.check("Einstein Hessian constant", gap, p["einstein_tol"])
    write_csv(run.path("hessian.csv"), ["direction", "closed_form", "finite_difference", "relative_gap"], rows)
    write_csv(run.path("hessian_einstein.csv"), ["n", "lambda", "computed", "closed_form", "gap"],
              [(n, lam, computed, exact, gap)])
    print(f"Einstein n={n} lambda={lam:g}: Hess = {computed:.17g} h0^-1 (closed form {exact:.17g})")


def cmd_flow(run: Run):
    from . import conformal_functionals as cf
    from .chart_geometry import ChartMetric

    p = run.params
    n = p["n"]
    if n == 2:
        amp = p["amplitude"] or 0.2
        cap = p["max_steps"] or 200
        metric = ChartMetric.random_conformal(2, p["resolution"], seed=p["seed"], amplitude=amp, max_mode=2)
        run.setting(amplitude=amp, max_steps=cap, resolution=p["resolution"], scheme="flow", max_mode=2)
        result = cf.uniformize_flow(metric, tol=p["tol"], max_steps=cap)
    else:
        amp = p["amplitude"] or 0.01
        cap = p["max_steps"] or 30
        model = cf.SpherePairModel(nodes=p["resolution"])
        omega_init = model.axisymmetric_function(seed=p["seed"], amplitude=amp)
        run.setting(amplitude=amp, max_steps=cap, nodes=p["resolution"], scheme="newton")
        result = cf.uniformize_flow(model, tol=p["tol"], max_steps=cap, omega_init=omega_init)
    result.write_log(run.path("flow_log.csv"))
    run.check("final residual", result.residual, p["check_tol"])
    run.check("step count", result.steps, cap + 1)
    print(f"flow n={n}: {result.steps} steps, residual {result.residual:.3e}")


def cmd_anomaly(run: Run):
    from . import conformal_functionals as cf
    from . import fg_expansion as fe
    from .chart_geometry import ChartMetric, random_sym_field, tt_project

    p = run.params
    res = p["resolution"]
    run.setting(resolution=res, order=4, max_mode=1)
    metric = ChartMetric.flat(4, res)
    tt = tt_project(metric, random_sym_field(metric, seed=p["seed"], amplitude=p["tt_amplitude"], max_mode=1))
    tt = getattr(tt, "full", tt)
    fg = fe.solve_fg(metric, neumann=tt, order=4)
    grid = cf.anomaly_tensors(fg)
    rows = [("trace_residual", grid["residuals"]["trace"]),
            ("divergence_residual", grid["residuals"]["divergence"])]
    run.check("Tr G4 - v4/2", grid["residuals"]["trace"], p["tol"])
    run.check("div G4", grid["residuals"]["divergence"], p["tol"])

    lam = p["lambda"]
    model = fe.solve_fg(ChartMetric.einstein(4, lam), order=4)
    out = cf.anomaly_tensors(model)
    g0 = model.h0.components
    g_multiple = float(np.sum(np.linalg.inv(g0) * out["G"]) / 4)
    derived = 3.0 / 64.0 if lam == -1.0 else None
    rows.append(("G4_multiple", g_multiple))
    if derived is not None:
        rows.append(("G4_multiple_derived", derived))
        run.check("G4 Einstein multiple", abs(g_multiple - derived), 1e-12)
    report = out.get("einstein_report", {})
    for key, value in report.items():
        rows.append((key, value))
    run.note("F_n Einstein discrepancy", **report)
    write_csv(run.path("anomaly.csv"), ["quantity", "value"], rows)
    for name, value in rows:
        print(f"{name} = {_fmt(value)}")


def cmd_schlafli(run: Run):
    from . import warped_models as wm

    p = run.params
    fam = wm.family_from_spec({"family": p["family"], "params": {"n": p["family_n"]}})
    run.setting(family=fam.describe(), derivative="complex step 1e-20")
    rows = []
    for t, r in wm.schlafli_check(fam, p["params"]):
        rows.append((t, r.lhs, r.rhs, r.gap, r.volume_term, r.boundary_term))
        run.check(f"gap t={t:g}", r.gap, p["tol"])
    write_csv(run.path("schlafli.csv"), ["t", "lhs", "rhs", "gap", "volume_term", "boundary_term"], rows)
    print(f"{fam.name}: max gap {max(r[3] for r in rows):.3e} over {len(rows)} values")


def cmd_spectrum(run: Run):
    from . import plotting
    from .fuchsian_spectral import imaginary_curve_rows, real_curve_rows

    p = run.params
    run.setting(pole_margin=p["pole_margin"])
    real = real_curve_rows(p["u_max"], p["count"])
    imag = imaginary_curve_rows(p["imag"], p["imag_count"], margin=p["pole_margin"])
    write_csv(run.path("spectrum.csv"), ["u", "H0", "H1", "Htilde"], real)
    write_csv(run.path("spectrum_imaginary.csv"), ["u", "H0", "H1"], imag)
    plotting.branch_panel(run.path("spectrum_real.svg"), real, ["H0", "H1", "Htilde"],
                          "real branch", xlabel="u")
    plotting.branch_panel(run.path("spectrum_imaginary.svg"), imag, ["H0", "H1"],
                          "imaginary branch", xlabel="u (alpha = -iu)")
    lower = min(r[1] - r[3] for r in real)
    run.check("Htilde below H0 on the real grid", -lower, 1e-12, passed=lower >= -1e-12)
    run.check("H0 positive on both grids", 0.0, 1.0,
              passed=min(r[1] for r in real) > 0 and min(r[1] for r in imag) > 0)
    print(f"real: min H0 {min(r[1] for r in real):.6g}; imaginary: min H0 {min(r[1] for r in imag):.6g}")


def cmd_certify(run: Run):
    from .fuchsian_spectral import positivity_certificate, spot_check

    p = run.params
    start = time.perf_counter()
    cert = positivity_certificate(u_max=p["u_max"] or None, max_steps=p["max_steps"],
                                  depth_cap=p["depth_cap"], initial_cells=p["initial_cells"])
    elapsed = time.perf_counter() - start
    with open(run.path("certificate.txt"), "w") as fh:
        fh.write(cert.serialize())
    spots = spot_check(cert, count=p["spot_count"], seed=p["seed"], u_range=p["spot_u_range"])
    write_csv(run.path("spot_check.csv"), ["quantity", "value"], sorted(spots.items()))
    run.setting(rounding=cert.rounding, ladder_steps=len(cert.ladder), imaginary_cells=len(cert.imaginary))
    run.check("verdict certified", 0.0, 1.0, passed=cert.certified)
    run.check("certificate runtime", elapsed, p["runtime_limit"])
    run.check("spot checks non-positive", spots["non_positive"], 1)
    print(f"verdict {cert.verdict}: {len(cert.ladder)} ladder steps, {len(cert.imaginary)} imaginary cells, "
          f"{elapsed:.2f} s")


def oracle_grid(n, branch, points):
    """gamma values per branch: real above the threshold, imaginary strictly inside it."""
    threshold = (n - 1) ** 2 / 4
    if branch == "real":
        us = np.linspace(0.1, 2.5, points)
        return threshold + us * us
    top = 0.48 if n == 4 else 0.95  # n=4: gamma > 2; n=3: clear of the lam = 1 pole
    lams = np.linspace(0.02, top, points)
    return threshold - lams * lams


def cmd_oracle(run: Run):
    from .fuchsian_spectral import SpectralPoint, g_from_scattering, get_multiplier, hessian_multiplier_H
    from .fuchsian_spectral.oracle import DEFAULT_WINDOW, MAX_CONDITION

    p = run.params
    run.setting(window=list(DEFAULT_WINDOW), max_condition=MAX_CONDITION, series_order=120, ode_rtol=1e-13)
    rows = []
    worst = 0.0
    for n in p["dims"]:
        if n not in (3, 4):
            raise ConfigError("oracle dims must be 3 or 4", dims=p["dims"])
        names = ["F"] if n == 3 else ["G", "ObsMult"]
        for branch in ("real", "imaginary"):
            for gam in oracle_grid(n, branch, p["points"]):
                for parity in (0, 1):
                    point = SpectralPoint(float(gam), n, parity)
                    for name in names:
                        mult = get_multiplier(name)
                        closed = float(mult.eval(point))
                        ref = float(mult.oracle(point))
                        gap = abs(closed - ref)
                        tol = p["tol"] * (1 + abs(closed))
                        rows.append((n, branch, parity, float(gam), name, closed, ref, gap, tol))
                        worst = max(worst, gap / tol)
                    if n == 4:
                        diag = hessian_multiplier_H(point, diagnostics=True)
                        third = -32 * g_from_scattering(point) + point.gamma * (point.gamma - 2) + 2
                        gap = max(abs(diag["assembly"] - diag["display_with_one"]), abs(diag["assembly"] - third))
                        rows.append((n, branch, parity, float(gam), "H_assembly", diag["assembly"], third, gap,
                                     p["assembly_tol"]))
                        run.check(f"assembly n=4 {branch} eps={parity} gamma={gam:.6g}", gap, p["assembly_tol"])
    run.check("oracle agreement (worst gap/tol)", worst, 1.0)
    write_csv(run.path("oracle.csv"),
              ["n", "branch", "parity", "gamma", "multiplier", "closed_form", "oracle", "gap", "tolerance"], rows)
    print(f"{len(rows)} rows, worst gap/tolerance {worst:.3e}")


COMMANDS = {
    "fg-expand": cmd_fg_expand,
    "volume": cmd_volume,
    "hessian": cmd_hessian,
    "flow": cmd_flow,
    "anomaly": cmd_anomaly,
    "schlafli": cmd_schlafli,
    "spectrum": cmd_spectrum,
    "certify": cmd_certify,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="renvol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        sub = subs.add_parser(name)
        sub.add_argument("--config", default=None, help="JSON config; flags override its values")
        for key, param in {**COMMON, **schema}.items():
            flag = "--" + key.replace("_", "-")
            sub.add_argument(flag, dest=key, default=None,
                             help=f"{param.help} (default {param.default!r})")
    return parser


def run(argv=None):
    """Parse, run, write the manifest; returns (exit status, Run or None)."""
    try:
        ns = build_parser().parse_args(argv)
        if ns.subcommand is None:
            raise ConfigError("a subcommand is required", known=sorted(SCHEMAS))
        raw = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config")}
        params, sources = resolve(ns.subcommand, ns.config, raw)
        if isinstance(_THREADS, str) or (isinstance(_THREADS, int) and _THREADS < 1):
            raise ConfigError("RENVOL_THREADS must be a positive integer", value=_THREADS)
        out = Path(params["out"])
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"renvol: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None

    ctx = Run(ns.subcommand, params, sources, out)
    start = time.perf_counter()
    status = EXIT_OK
    try:
        COMMANDS[ns.subcommand](ctx)
        if not ctx.passed:
            status = EXIT_CHECK
    except (ConfigError, ArgumentError) as exc:
        ctx.errors.append(_error_record(exc))
        status = EXIT_CONFIG
    except RenvolError as exc:
        ctx.errors.append(_error_record(exc))
        status = EXIT_CHECK
    for c in ctx.checks:
        if not c["passed"]:
            print(f"FAIL {c['name']}: {c['value']:.3e} (tolerance {c['tolerance']:.3e})", file=sys.stderr)
    for e in ctx.errors:
        print(f"error {e['type']}: {e['message']}", file=sys.stderr)
    label = {EXIT_OK: "ok", EXIT_CHECK: "check_failed", EXIT_CONFIG: "config_error"}[status]
    with open(out / "manifest.json", "w") as fh:
        json.dump(ctx.manifest(time.perf_counter() - start, label), fh, indent=1, sort_keys=True)
    return status, ctx


def main(argv=None):
    status, _ = run(argv)
    return status


if __name__ == "__main__":
    sys.exit(main())
