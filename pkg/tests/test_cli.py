import shutil

import numpy as np
import pytest

from conftest import fixture_path
from mufde.cli import main


def run(args):
    return main(args)


def test_solve_closed_form_and_determinism(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    assert run(["solve", fixture_path("scalar_neutral.toml"),
                "--method", "closed-form", "--grid-per-mu", "40",
                "--out", str(out1)]) == 0
    assert run(["solve", fixture_path("scalar_neutral.toml"),
                "--method", "closed-form", "--grid-per-mu", "40",
                "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "t,w1"
    assert (tmp_path / "a.csv.meta").exists()


def test_solve_picard_two_state_csv(tmp_path):
    out = tmp_path / "ex3.csv"
    assert run(["solve", fixture_path("example3.toml"), "--method", "picard",
                "--grid-per-mu", "60", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,w1,w2"
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert data[0, 0] == pytest.approx(-0.3)
    assert data[-1, 0] == pytest.approx(0.6)
    # history columns obey the prescribed functions
    neg = data[data[:, 0] <= 0]
    assert np.allclose(neg[:, 1], neg[:, 0] ** 3, atol=1e-12)
    assert np.allclose(neg[:, 2], 2 * neg[:, 0] + 1, atol=1e-12)


def test_solve_oracle_cross_method_on_exact_fixture(tmp_path):
    pic = tmp_path / "picard.csv"
    orl = tmp_path / "oracle.csv"
    assert run(["solve", fixture_path("scalar_neutral.toml"), "--method", "picard",
                "--grid-per-mu", "80", "--out", str(pic)]) == 0
    assert run(["solve", fixture_path("scalar_neutral.toml"), "--method", "oracle",
                "--oracle-steps", "2048", "--out", str(orl)]) == 0
    a = np.loadtxt(pic, delimiter=",", skiprows=1)
    b = np.loadtxt(orl, delimiter=",", skiprows=1)
    interp = np.interp(a[a[:, 0] >= 0, 0], b[:, 0], b[:, 1])
    sup = np.max(np.abs(a[a[:, 0] >= 0, 1] - interp))
    assert sup <= 1e-3 * (1.0 + np.max(np.abs(b[:, 1])))


def test_zero_data_config_yields_zero_trajectory(tmp_path):
    cfg = tmp_path / "zero.toml"
    cfg.write_text("""
[system]
n = 1
alpha = 0.5
delays = [0.25]
T = 0.8
[matrices]
A = [[0.0]]
B = [0.0]
F = [[0.0]]
[mu]
preset = "identity"
[history]
phi = ["0"]
""")
    out = tmp_path / "zero.csv"
    assert run(["solve", str(cfg), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1])) == 0.0


def test_config_errors_exit_code_and_field_path(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("""
[system]
n = 1
alpha = 0.5
delays = [0.25]
T = 0.8
[matrices]
A = [[0.0]]
B = [0.0, 0.0]
F = [[0.0]]
[mu]
preset = "identity"
[history]
phi = ["0"]
""")
    assert run(["solve", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1
    err = capsys.readouterr().err
    assert "matrices.B" in err

    assert run(["solve", str(tmp_path / "missing.toml"),
                "--out", str(tmp_path / "x.csv")]) == 1

    bad_expr = tmp_path / "bad2.toml"
    bad_expr.write_text(cfg.read_text().replace('B = [0.0, 0.0]', 'B = [0.0]')
                        .replace('phi = ["0"]', 'phi = ["w1"]'))
    assert run(["solve", str(bad_expr), "--out", str(tmp_path / "x.csv")]) == 1
    err = capsys.readouterr().err
    assert "history.phi" in err


def test_non_convergence_exit_code(tmp_path):
    src = open(fixture_path("example3.toml")).read()
    cfg = tmp_path / "hard.toml"
    cfg.write_text(src.replace("picard_max_iter = 40", "picard_max_iter = 1")
                   .replace("picard_tol = 1e-10", "picard_tol = 1e-14"))
    out = tmp_path / "hard.csv"
    assert run(["solve", str(cfg), "--method", "picard", "--grid-per-mu", "30",
                "--out", str(out)]) == 2


def test_certify_output(capsys, tmp_path):
    assert run(["certify", fixture_path("example3.toml")]) == 0
    out = capsys.readouterr().out
    assert "rho:" in out and "xnorm" in out
    assert "unique: false" in out
    assert "rho_per_delay" in out and "rho_matrix" in out
    assert "warning" in out

    assert run(["certify", fixture_path("scalar_neutral.toml")]) == 0
    out = capsys.readouterr().out
    assert "rho: 0" in out and "unique: true" in out


def test_compare_monotone_and_self_zero(capsys):
    assert run(["compare", fixture_path("scalar_neutral.toml"),
                "--resolutions", "128,512,2048"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "resolution,error"
    errs = [float(ln.split(",")[1]) for ln in out[1:]]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-3

    assert run(["compare", fixture_path("scalar_neutral.toml"),
                "--resolutions", "64,128", "--target", "closed-form"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert all(float(ln.split(",")[1]) == 0.0 for ln in out[1:])


def test_table_dump(tmp_path):
    out = tmp_path / "lattice.csv"
    assert run(["table", fixture_path("example3.toml"), "--levels", "4",
                "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("k,i1,i2,m11")
    assert len(lines) > 10
