import csv
import json
import shutil

import numpy as np
import pytest

from parabolic_ocp.cli import main
from parabolic_ocp.config import ConfigError, parse_config
from parabolic_ocp.fields import load_field, save_field

SMALL = """\
[problem]
name = cubic_example
gamma = 0.1   # separation margin
b = 1.0

[mesh]
dim = 2
nx = 8
ny = 8
nt = 16

[verification]
seed = 0
soc_samples = 30
growth_perturbations = 20
holder_pairs = 2000
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------------ config

def test_parse_defaults_and_roundtrip():
    cfg = parse_config(SMALL)
    assert cfg.problem_name == "cubic_example"
    assert cfg.problem_params == {"gamma": 0.1, "b": 1.0}
    assert cfg.mesh_params["nt"] == 16 and cfg.mesh_params["T"] == 1.0
    assert cfg.verification.robinson_rho == (1e-2, 1e-3)
    again = parse_config(cfg.to_ini())
    assert again.to_ini() == cfg.to_ini()
    assert again.problem().params["gamma"] == 0.1


@pytest.mark.parametrize("text, where", [
    ("[problem]\nname = cubic_example\ngama = 0.1\n", ":3:"),
    ("[problem]\nname = convex_quadratic\na = 1\nb = 0.5\n", ":4:"),
    ("[problem]\nname = nothing\n", ":2:"),
    ("[problem]\nname = cubic_example\n[mesh]\nnx = eight\n", ":4:"),
    ("[problem]\nname = cubic_example\n[extra]\nk = 1\n", ":3:"),
    ("[problem]\nname = cubic_example\n[verification]\nkkt_tol = -1\n", ":4:"),
])
def test_config_errors_carry_line_numbers(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text, "cfg.ini")


def test_missing_problem_and_syntax_errors():
    with pytest.raises(ConfigError, match="problem"):
        parse_config("[mesh]\nnx = 4\n")
    with pytest.raises(ConfigError):
        parse_config("name = orphan\n")


def test_sweep_override():
    cfg = parse_config(SMALL + "[sweep]\nparameter = mesh.n\nvalues = 4, 8\n")
    assert cfg.sweep.values == (4, 8)
    fine = cfg.with_override("mesh.n", 16)
    assert (fine.mesh_params["nx"], fine.mesh_params["ny"], fine.mesh_params["nt"]) == (16, 16, 32)
    assert cfg.with_override("problem.gamma", 0.2).problem().params["gamma"] == 0.2
    with pytest.raises(ConfigError):
        cfg.with_override("verification.seed", 1)


# ------------------------------------------------------------------ cli

@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write(d, SMALL)
    code = main(["solve", "--config", str(cfg), "--out", str(d / "sol"), "--quiet"])
    return code, d, cfg


def test_solve_writes_certified_directory(solved):
    code, d, _ = solved
    assert code == 0
    names = {p.name for p in (d / "sol").iterdir()}
    assert {"u.csv", "y.csv", "phi.csv", "e.csv", "ehat.csv", "report.json", "history.csv",
            "config.ini"} <= names
    rep = json.loads((d / "sol" / "report.json").read_text())
    assert rep["certified"] and rep["kkt"]["stationarity"] <= 1e-6
    with open(d / "sol" / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == rep["outer_iterations"]


def test_certify_soc_regularity(solved):
    _, d, _ = solved
    sol = d / "sol"
    assert main(["certify", str(sol), "--quiet"]) == 0
    kkt = json.loads((sol / "kkt.json").read_text())
    assert kkt["certified"] and kkt["separation_margin"] >= 0.1
    assert all(r["delta"] > 0 for r in kkt["robinson"])
    assert main(["soc", str(sol), "--quiet"]) == 0
    soc = json.loads((sol / "soc.json").read_text())
    assert soc["soc"]["min_value"] > 0 and soc["growth"]["kappa"] > 0
    assert main(["regularity", str(sol), "--quiet"]) == 0
    reg = json.loads((sol / "regularity.json").read_text())
    assert "ehat: exponent undefined" in reg["warnings"]
    assert (sol / "bins.csv").read_text().startswith("field,region,bin,distance,max_increment,count")


def test_perturbed_control_fails_certification(solved, tmp_path):
    _, d, _ = solved
    bad = tmp_path / "bad"
    shutil.copytree(d / "sol", bad)
    u = load_field(bad / "u.csv")
    v = u.values.copy()
    v[5, 10] += 0.05
    save_field(bad / "u.csv", u.with_values(v))
    assert main(["certify", str(bad), "--quiet"]) == 1
    assert "stationarity" in json.loads((bad / "kkt.json").read_text())["failing"]
    assert main(["soc", str(bad), "--quiet"]) == 1
    assert json.loads((bad / "soc.json").read_text())["soc"]["low_confidence"]


def test_empty_directory_lists_missing_files(solved, tmp_path, capfd):
    _, _, cfg = solved
    (tmp_path / "empty").mkdir()
    assert main(["certify", str(tmp_path / "empty"), "--config", str(cfg)]) == 2
    err = capfd.readouterr().err
    assert "u.csv" in err and "ehat.csv" in err


def test_usage_errors_exit_2(tmp_path):
    bad = write(tmp_path, "[problem]\nname = convex_quadratic\na = 2\nb = 1\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert not (tmp_path / "o").exists()
    assert main(["solve", "--quiet"]) == 2          # no config anywhere
    assert main(["frobnicate"]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.ini")]) == 2


def test_budget_of_one_iteration(tmp_path):
    cfg = write(tmp_path, SMALL + "[optimizer]\nmax_outer = 1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--quiet"]) == 1
    rep = json.loads((tmp_path / "b" / "report.json").read_text())
    assert not rep["certified"] and rep["outer_iterations"] == 1
    assert load_field(tmp_path / "b" / "u.csv").values.shape == (17, 64)


def test_constant_field_regularity_warns(solved, tmp_path):
    _, d, _ = solved
    flat = tmp_path / "flat"
    shutil.copytree(d / "sol", flat)
    y = load_field(flat / "y.csv")
    save_field(flat / "y.csv", y.with_values(np.zeros_like(y.values)))
    assert main(["regularity", str(flat), "--quiet"]) == 0
    assert "y: exponent undefined" in json.loads((flat / "regularity.json").read_text())["warnings"]


def test_mesh_sweep(tmp_path):
    cfg = write(tmp_path, SMALL.replace("nx = 8\nny = 8\nnt = 16", "nx = 4\nny = 4\nnt = 8")
                + "[sweep]\nparameter = mesh.n\nvalues = 4, 8, 16\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--jobs", "2", "--quiet"]) == 0
    with open(tmp_path / "sw" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["nx"]) for r in rows] == [4, 8, 16]
    J = np.array([float(r["J"]) for r in rows])
    assert abs(J[2] - J[1]) < abs(J[1] - J[0])   # Cauchy differences shrink
    assert all((tmp_path / "sw" / f"point_{i:03d}" / "report.json").is_file() for i in range(3))


def test_gamma_sweep_respects_margin(tmp_path):
    cfg = write(tmp_path, SMALL + "[sweep]\nparameter = problem.gamma\nvalues = 0.05, 0.2\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "g"), "--quiet"]) == 0
    with open(tmp_path / "g" / "summary.csv") as fh:
        for r in csv.DictReader(fh):
            assert float(r["separation_margin"]) >= float(r["gamma"])


def test_sweep_reports_failed_points(tmp_path):
    cfg = write(tmp_path, SMALL + "[optimizer]\nmax_outer = 1\n[sweep]\nparameter = problem.gamma\nvalues = 0.1\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "f"), "--quiet"]) == 1
    with open(tmp_path / "f" / "summary.csv") as fh:
        assert next(csv.DictReader(fh))["status"] == "check_failed"


def test_sweep_without_grid_is_usage_error(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "x"), "--quiet"]) == 2
