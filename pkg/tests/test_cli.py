import csv
import json
import subprocess
import sys
import textwrap

import pytest

from mate.cli import load_config, main, run
from mate.discretize import GRID_CSV_COLUMNS
from mate.errors import ConfigError
from mate.model import eval_jet
from mate.schemas import RUN_REPORT_SCHEMA, validate
from mate.verify import ORDER_COLUMNS

MA_DISK = """
[domain]
kind = disk

[grid]
n_r = 64
n_theta = 128

[problem]
A = zero
B = 1
boundary = neumann
phi = z - 3/2
z_interval = 0, 0.5
"""

CONF_CHECK = """
[problem]
A = conformal
phi = -0.5

[checks]
run = regularity, A_convexity, QS
z_count = 3
p_count = 5
direction_count = 16
boundary_count = 16
interior_count = 3
"""

BALANCE = """
[problem]
phi = z
[balance]
f = 1
f_star = 2
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def report(out):
    data = json.loads((out / "report.json").read_text())
    validate(data, RUN_REPORT_SCHEMA)
    return data


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "[problem]\nphi = z - 3/2\n"))
    assert cfg.domain.kind == "disk" and cfg.domain.radius == 1.0
    assert cfg.resolution == (32, 64)
    assert cfg.problem.A.name and cfg.solve.tol == 1e-10
    assert cfg.box.p_max == 5.0 and cfg.box.direction_count == 64


def test_phi_z_detected(tmp_path):
    import numpy as np

    cfg = load_config(write(tmp_path, MA_DISK))
    phi = cfg.problem.G.phi
    jet = eval_jet(phi, np.array([[1.0, 0.0]]), np.array([0.3]), None, order=1)
    assert jet.dz[0] == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[problem]\nA = confrmal\nphi = 1\n", "'conformal'"),
        ("[problem]\nphi = 1\nBB = 2\n", "'B'"),
        ("[problme]\nphi = 1\n", "'problem'"),
        ("[problem]\nphi = x3 + 1\n", "phi"),
        ("[problem]\nphi = 1\nboundary = obliqe:tilted\n", "'oblique:tilted'"),
        ("[grid]\nn_r = many\n[problem]\nphi = 1\n", "n_r"),
        ("[problem]\nB = 1\n", "phi"),
        ("[problem]\nphi = 1\n[mms]\nresolutions = 8, 16, 24\n", "doubling"),
        ("[problem]\nphi = 1\n[solve]\ntol = -1\n", "tol"),
    ],
)
def test_config_errors(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(write(tmp_path, text))


def test_config_error_has_line_number(tmp_path):
    path = write(tmp_path, "[domain]\nkind = disk\n\n[problem]\nA = confrmal\nphi = 1\n")
    with pytest.raises(ConfigError, match=r"run.ini:5: \[problem\] A"):
        load_config(path)


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["check", "--config", write(tmp_path, "[problem]\nA = confrmal\nphi = 1\n")]) == 4
    assert "did you mean 'conformal'" in capsys.readouterr().err


def test_check_conformal(tmp_path):
    out = tmp_path / "out"
    assert main(["check", "--config", write(tmp_path, CONF_CHECK), "--out", str(out)]) == 0
    data = report(out)
    margins = {c["condition"]: c for c in data["checks"]}
    assert margins["A_convexity"]["margin"] == pytest.approx(0.5, abs=1e-6)
    assert margins["A_convexity"]["hypothesis"]
    assert margins["regularity"]["margin"] == pytest.approx(1.0, abs=1e-6)


def test_required_failure_prints_witness(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["check", "--config", write(tmp_path, CONF_CHECK.replace("-0.5", "-1.5")),
                 "--require", "A_convexity", "--out", str(out)])
    assert code == 2
    err = capsys.readouterr().err
    assert "A_convexity" in err and '"x":' in err
    assert report(out)["failed"] == ["A_convexity"]


def test_unknown_required_check(tmp_path):
    assert main(["check", "--config", write(tmp_path, CONF_CHECK), "--require", "regularty"]) == 4


def test_solve_ma_disk(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", write(tmp_path, MA_DISK), "--out", str(out)]) == 0
    data = report(out)
    assert data["solve"]["converged"] and data["solve"]["res_inf"] <= 1e-10
    with open(out / "solution.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == tuple(GRID_CSV_COLUMNS) and len(rows) == 64 * 128 + 2


def test_solver_failure_exit_code(tmp_path):
    out = tmp_path / "out"
    text = MA_DISK.replace("n_r = 64", "n_r = 8").replace("n_theta = 128", "n_theta = 16") + "\n[solve]\nmax_iter = 1\n"
    text = text.replace("phi = z - 3/2", "phi = z + 5")
    assert main(["solve", "--config", write(tmp_path, text), "--out", str(out)]) == 3
    data = report(out)
    assert data["exit_code"] == 3 and data["failure"]


def test_balance(tmp_path):
    out = tmp_path / "out"
    assert main(["balance", "--config", write(tmp_path, BALANCE), "--out", str(out)]) == 0
    data = report(out)
    d = data["checks"][0]["details"]
    assert d["integral_f"] == pytest.approx(3.1416, abs=1e-4)
    assert d["integral_f_star"] == pytest.approx(6.2832, abs=1e-4)
    assert data["checks"][0]["verdict"] == "holds-strictly"
    same = write(tmp_path, BALANCE.replace("f_star = 2", "f_star = 1"), "same.ini")
    assert main(["balance", "--config", same, "--require", "mass_balance", "--out", str(out)]) == 2


def test_mms_and_compare(tmp_path):
    text = MA_DISK.replace("n_r = 64", "n_r = 16").replace("n_theta = 128", "n_theta = 32")
    text += "\n[mms]\ncase = MA-DISK-EXP\nresolutions = 8, 16, 32\n"
    path = write(tmp_path, text)
    out = tmp_path / "mms"
    assert main(["mms", "--config", path, "--out", str(out)]) == 0
    with open(out / "orders.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == tuple(ORDER_COLUMNS)
    assert float(rows[-1][3]) >= 1.8
    out = tmp_path / "cmp"
    assert main(["compare", "--config", path, "--out", str(out)]) == 0
    data = report(out)
    assert data["comparisons"]["u_vs_u_plus_shift"]["verdict"] == "consistent"
    assert data["comparisons"]["u_vs_u_minus_shift"]["verdict"] == "no claim"


def test_report_deterministic(tmp_path, monkeypatch):
    path = write(tmp_path, CONF_CHECK)
    texts = []
    for i, threads in enumerate(("1", "4", "4")):
        monkeypatch.setenv("MATE_THREADS", threads)
        out = tmp_path / f"o{i}"
        run("check", load_config(path), out_dir=str(out))
        texts.append((out / "report.json").read_bytes())
    assert texts[0] == texts[1] == texts[2]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mate.cli", "balance", "--config", write(tmp_path, BALANCE),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


@pytest.mark.parametrize("name", ["ma_disk", "conformal_check", "balance", "ot_rectangle"])
def test_shipped_configs_load(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.ini"
    cfg = load_config(str(path))
    assert cfg.out_dir.startswith("out/")
