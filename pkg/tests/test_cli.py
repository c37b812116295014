import math
from pathlib import Path

import numpy as np
import pytest

from splitlab.cli import main
from splitlab.melnikov import HomoclinicGrid, melnikov_kernel

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GOLDEN = "1.0, 0.6180339887498949"
MODES = """
    1 0 0.5 0.0
    -1 0 0.5 0.0
    0 1 0.5 0.0
    0 -1 0.5 0.0"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, command, text, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def test_melnikov_coefficients(tmp_path):
    code, out = _run(tmp_path, "melnikov", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                            "[experiment]\nshape = 8, 8\n")
    assert code == 0
    rows = (out / "gamma_coefficients.csv").read_text().splitlines()
    assert rows[0].startswith("# splitlab ") and rows[1].startswith("# config_hash=")
    body = {r.split(",")[0]: r.split(",") for r in rows[3:]}
    assert float(body["0 1"][4]) == pytest.approx(0.5 * melnikov_kernel(0.6180339887498949), rel=1e-15)
    grid = HomoclinicGrid.from_text((out / "gamma_grid.txt").read_text())
    assert grid.shape == (8, 8)


def test_unperturbed_homoclinic_grid_is_eight(tmp_path):
    code, out = _run(tmp_path, "homoclinic", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                              "[experiment]\nkinds = glued\nmu = 0.0\nshape = 2, 2\n")
    assert code == 0
    grid = HomoclinicGrid.from_text((out / "homoclinic_glued_mu0.txt").read_text())
    np.testing.assert_allclose(grid.samples, 8.0, atol=1e-10)


def test_homoclinic_output_independent_of_workers(tmp_path):
    text = (f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
            "[experiment]\nkinds = glued\nmu = 1e-3\nshape = 2, 2\n")
    cfg = _write(tmp_path, text)
    outs = []
    for w in ("1", "2"):
        out = tmp_path / f"w{w}"
        assert main(["homoclinic", "--config", str(cfg), "--out", str(out), "--workers", w]) == 0
        outs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
    assert outs[0] == outs[1]


def test_seed_changes_config_hash(tmp_path):
    text = f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n[experiment]\nshape = 4, 4\n"
    cfg = _write(tmp_path, text)
    heads = []
    for seed in ("1", "2", "1"):
        out = tmp_path / f"s{seed}{len(heads)}"
        assert main(["melnikov", "--config", str(cfg), "--out", str(out), "--seed", seed]) == 0
        heads.append((out / "gamma_grid.txt").read_text().splitlines()[1])
    assert heads[0] == heads[2] != heads[1]


def test_splitting_radial_passes(tmp_path):
    code, out = _run(tmp_path, "splitting", (CONFIGS / "splitting_radial.ini").read_text())
    assert code == 0
    rep = dict(line.split("=", 1) for line in (out / "splitting_report.txt").read_text().splitlines()
               if not line.startswith("#"))
    assert rep["passed"] == "true"
    assert float(rep["diffusion_time_bound"]) == pytest.approx(2 * 400 + math.log(1e3), rel=1e-12)


def test_splitting_auto_window_on_first_order_grid(tmp_path):
    code, out = _run(tmp_path, "splitting", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                             "[experiment]\nsource = first_order\nmu = 1e-2\nshape = 1024, 1024\n")
    assert code == 0
    text = (out / "splitting_report.txt").read_text()
    assert "passed=true" in text


def test_torus_summary(tmp_path):
    code, out = _run(tmp_path, "torus", (CONFIGS / "torus.ini").read_text().replace("1e-3, 2e-3, 4e-3", "1e-3"))
    assert code == 0
    rows = (out / "torus_summary.csv").read_text().splitlines()
    assert rows[2].startswith("mu,residual")
    assert float(rows[3].split(",")[1]) < 1e-10


def test_threescales_small(tmp_path):
    text = ("[system]\na = 1.0\n[perturbation]\nmodes =" + MODES +
            "\n[experiment]\neps_list = 0.05, 0.04\nshape = 2, 2\nwindow_eps = 0.01\n")
    code, out = _run(tmp_path, "threescales", text)
    assert code == 0
    summary = (out / "threescales_summary.txt").read_text()
    assert "slope_G=" in summary and "window_feasible" not in summary


def test_diffuse_small(tmp_path):
    text = (CONFIGS / "diffuse.ini").read_text().replace("2e-2, 1e-2, 5e-3, 2.5e-3", "2e-2, 1e-2")
    code, out = _run(tmp_path, "diffuse", text)
    assert code == 0
    scaling = (out / "scaling.csv").read_text()
    assert "# spread=" in scaling and "# C_fit=" in scaling
    summ = (out / "diffuse_mu1_summary.txt").read_text()
    assert "T_d=none" not in summ


# exit codes -----------------------------------------------------------------------

def test_missing_config_exit_2(tmp_path):
    assert main(["melnikov", "--config", str(tmp_path / "nope.ini")]) == 2


def test_missing_mode_file_exit_2(tmp_path):
    code, _ = _run(tmp_path, "melnikov", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes_file = gone.txt\n")
    assert code == 2


def test_unknown_section_exit_2(tmp_path):
    code, _ = _run(tmp_path, "melnikov", "[sytsem]\nomega = 1.0\n")
    assert code == 2


def test_bad_number_exit_2(tmp_path):
    code, _ = _run(tmp_path, "homoclinic", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                            "[experiment]\nmu = small\n")
    assert code == 2


def test_large_mu_refused_exit_3(tmp_path):
    code, _ = _run(tmp_path, "homoclinic", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                            "[experiment]\nmu = 5.0\nshape = 2, 2\n")
    assert code == 3


def test_wall_clock_budget_exit_4(tmp_path):
    code, _ = _run(tmp_path, "homoclinic", f"[system]\nomega = {GOLDEN}\n[perturbation]\nmodes ={MODES}\n"
                                            "[experiment]\nmu = 0.0, 1e-3\nshape = 2, 2\n", "--budget", "0")
    assert code == 4
