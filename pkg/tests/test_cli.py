import csv
import json
import os
import subprocess
import sys

import pytest

from renvol import cli


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    status, ctx = cli.run([argv[0], "--out", str(out), *argv[1:]])
    return status, ctx, out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_fg_expand_einstein_row(tmp_path, capsys):
    status, _, out = _run(tmp_path, "fg-expand", "--model", "einstein", "--lambda", "-1", "--n", "4")
    assert status == 0
    assert "v4 = 0.375" in capsys.readouterr().out
    rows = _rows(out / "fg_table.csv")
    v4 = [r for r in rows if r and r[0] == "v4"]
    assert v4 and float(v4[0][1]) == 0.375
    assert (out / "fg_expansion.json").exists()


def test_manifest_records_parameters_and_sources(tmp_path):
    status, _, out = _run(tmp_path, "fg-expand", "--model", "einstein", "--lambda", "-2", "--n", "2")
    man = _manifest(out)
    assert status == 0 and man["status"] == "ok"
    assert man["parameters"]["lambda"] == -2.0
    assert man["parameter_sources"]["lambda"] == "flag"
    assert man["parameter_sources"]["order"] == "default"
    assert "fg_table.csv" in man["artifacts"]
    assert all(c["passed"] for c in man["checks"])


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "volume", "lambda": -1.0, "shifts": [0.1], "tol": 1e-6}))
    status, ctx, out = _run(tmp_path, "volume", "--config", str(cfg), "--tol", "1e-5")
    assert status == 0
    man = _manifest(out)
    assert man["parameters"]["shifts"] == [0.1]
    assert man["parameter_sources"]["shifts"] == "config"
    assert man["parameters"]["tol"] == 1e-5
    assert man["parameter_sources"]["tol"] == "flag"
    assert any(n["note"] == "residue discrepancy" for n in man["notes"])


@pytest.mark.parametrize("payload", [{"bogus": 1}, {"subcommand": "flow"}, [1, 2]])
def test_bad_config_is_exit_three(tmp_path, payload):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(payload))
    status, ctx, _ = _run(tmp_path, "volume", "--config", str(cfg))
    assert status == 3 and ctx is None


@pytest.mark.parametrize("argv", [["volume", "--lambda", "abc"], ["volume", "--frobnicate", "1"],
                                  ["teleport"], []])
def test_bad_arguments_are_exit_three(argv):
    assert cli.main(argv) == 3


def test_failed_check_is_exit_two(tmp_path):
    status, _, out = _run(tmp_path, "volume", "--tol", "1e-300", "--shifts", "0.3")
    assert status == 2
    man = _manifest(out)
    assert man["status"] == "check_failed"
    assert any(not c["passed"] for c in man["checks"])


def test_volume_outputs(tmp_path):
    status, _, out = _run(tmp_path, "volume")
    assert status == 0
    rows = _rows(out / "polyakov.csv")
    assert rows[0] == ["c", "riesz_difference", "conformal_shift", "gap"]
    assert all(float(r[3]) < 1e-6 for r in rows[1:])
    quantities = {r[0]: float(r[1]) for r in _rows(out / "riesz.csv")[1:]}
    assert quantities["residue"] == pytest.approx(quantities["minus_pi_chi"], rel=1e-12)


def test_schlafli_outputs(tmp_path):
    status, _, out = _run(tmp_path, "schlafli", "--family", "hyperbolic_ball")
    assert status == 0
    rows = _rows(out / "schlafli.csv")
    assert rows[0][:4] == ["t", "lhs", "rhs", "gap"]
    assert all(float(r[3]) < 1e-8 for r in rows[1:])


def test_spectrum_files_are_deterministic(tmp_path):
    argv = ("spectrum", "--n", "4", "--u-max", "1.5", "--imag", "0.5")
    first = _run(tmp_path, *argv, name="a")
    second = _run(tmp_path, *argv, name="b")
    assert first[0] == second[0] == 0
    for name in ("spectrum.csv", "spectrum_imaginary.csv", "spectrum_real.svg", "spectrum_imaginary.svg"):
        assert (first[2] / name).read_bytes() == (second[2] / name).read_bytes(), name
    rows = _rows(first[2] / "spectrum.csv")
    assert rows[0] == ["u", "H0", "H1", "Htilde"]
    # 17 significant digits round-trip exactly
    assert all(repr(float(v)) == repr(float(repr(float(v)))) for v in rows[1][1:])
    assert min(float(r[1]) for r in rows[1:]) > 0
    svg = (first[2] / "spectrum_real.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_certify_verdict(tmp_path):
    status, _, out = _run(tmp_path, "certify", "--spot-count", "500")
    assert status == 0
    text = (out / "certificate.txt").read_text()
    assert "verdict: certified" in text
    assert "[real-ladder]" in text and "[imaginary-cells]" in text
    rows = _rows(out / "spot_check.csv")
    assert len(rows) > 1


def test_oracle_table(tmp_path):
    status, _, out = _run(tmp_path, "oracle", "--dims", "4", "--points", "4")
    assert status == 0
    rows = _rows(out / "oracle.csv")
    assert rows[0][:5] == ["n", "branch", "parity", "gamma", "multiplier"]
    assert all(float(r[7]) <= float(r[8]) for r in rows[1:])


def test_thread_cap_and_console_script(tmp_path):
    env = {**os.environ, "RENVOL_THREADS": "zero"}
    bad = subprocess.run([sys.executable, "-m", "renvol.cli", "volume", "--out", str(tmp_path / "t")],
                         env=env, capture_output=True, text=True)
    assert bad.returncode == 3
    env["RENVOL_THREADS"] = "1"
    ok = subprocess.run([sys.executable, "-m", "renvol.cli", "schlafli", "--out", str(tmp_path / "s")],
                        env=env, capture_output=True, text=True)
    assert ok.returncode == 0
    assert _manifest(tmp_path / "s")["threads"] == 1
