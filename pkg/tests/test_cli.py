import csv

import pytest

from levybellman.cli import main

INI = """
[problem]
model = two_control
a = 0.1
b = 1.0

[kernels]
model = tempered_stable
gamma = 0.5

[lattice]
bounds = 0, 2pi
n = 32
farfield = periodic

[stepper]
cfl_mode = auto_dt

[switching]
partition = up | down
costs = 0.4, 0.2, 0.1

[harness]
levels = 16, 32, 64
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(INI)
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_solve(config, tmp_path):
    out = tmp_path / "u.csv"
    assert main(["solve", "--config", str(config), "--out", str(out)]) == 0
    assert rows(out)[0] == ["x1", "value", "active"] and len(rows(out)) == 34     # 33 nodes incl. both ends
    assert (tmp_path / "u_steps.csv").exists()


def test_switching(config, tmp_path):
    out = tmp_path / "sw.csv"
    assert main(["switching", "--config", str(config), "--out", str(out)]) == 0
    assert rows(out)[0] == ["x1", "v1", "v2"]
    assert rows(tmp_path / "sw_gaps.csv")[-1][0] == "fitted_exponent"


@pytest.mark.parametrize("model", ["tempered_g05", "tempered_g15", "finite_exp", "tempered_g15_2d"])
def test_kernels(tmp_path, model):
    out = tmp_path / "k.csv"
    assert main(["kernels", "--model", model, "--dx", "0.1", "--out", str(out)]) == 0
    assert rows(out)[0] == ["table", "n", "z", "weight"] and len(rows(out)) > 2


def test_stencil(config, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["stencil", "--config", str(config), "--model", "tempered_g15_skew", "--out", str(out)]) == 0
    kinds = {r[-1] for r in rows(out)[1:]}
    assert "diag_mass" in kinds and "grid" in kinds


def test_convergence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text(INI.replace("two_control", "linear"))
    out = tmp_path / "r.csv"
    assert main(["convergence", "--config", str(ini), "--out", str(out)]) == 0
    assert len(rows(out)) == 5


def test_verify_subset(tmp_path, capsys):
    out = tmp_path / "v.csv"
    assert main(["verify", "--only", "9", "--out", str(out)]) == 0
    assert "criterion 9" in capsys.readouterr().out
    assert rows(out)[1][2] == "True"


def test_bad_input(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    assert main(["solve", "--config", str(bad)]) == 2
    bad.write_text("[kernels]\nmodel = nope\n")
    assert main(["kernels", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_failed_gate_exit_code(tmp_path):
    # explicit scheme with a fixed step beyond the CFL bound and the gate disabled
    ini = tmp_path / "x.ini"
    ini.write_text(INI.replace("cfl_mode = auto_dt", "cfl_mode = off\ndt = 0.05").replace("a = 0.1", "a = 1.0"))
    assert main(["solve", "--config", str(ini), "--out", str(tmp_path / "u.csv")]) == 1
