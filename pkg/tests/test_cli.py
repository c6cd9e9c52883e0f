import json
import math
import subprocess
import sys

import pytest

from pfopt.cli import main
from pfopt.io import CSV_HEADER


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "pfopt", *args],
                          capture_output=True, text=True, timeout=600)


def small_cfg(tmp_path, **model):
    data = {"mesh": {"h0": 0.05, "adapt": False},
            "model": {"eps": 0.02, "alpha_bar": 0.24, "mu": 0.1, **model},
            "schedule": {"mu_start": 0.1, "stages": 1},
            "output": {"dir": str(tmp_path / "out"), "vtk_every": 1}}
    p = tmp_path / "small.cfg"
    p.write_text(json.dumps(data))
    return p


def test_asymptotics_quartic(capsys):
    assert main(["asymptotics", "--potential", "quartic"]) == 0
    out = capsys.readouterr().out
    value = float(out.split("c0_def=")[1].split(",")[0])
    assert value == pytest.approx(math.sqrt(2) / 3, abs=1e-6)
    assert "c0_def=0.471405" in out


def test_unknown_subcommand_exits_2():
    res = run_cli("bogus")
    assert res.returncode == 2
    assert "usage" in res.stderr


def test_missing_config_reports_error(capsys):
    assert main(["eval", "--config", "/nonexistent/x.cfg"]) == 1
    assert "error" in capsys.readouterr().err


def test_check_gradient_coarse_drag():
    res = run_cli("check-gradient", "--config", "coarse_drag.cfg")
    assert res.returncode == 0, res.stdout + res.stderr
    assert "PASS" in res.stdout


def test_run_smoke(tmp_path):
    cfg = small_cfg(tmp_path)
    res = run_cli("run", "--config", str(cfg), "--max-steps", "2", "--quiet")
    assert res.returncode == 0, res.stderr
    out = tmp_path / "out"
    assert (out / "history.csv").read_text().splitlines()[0] == CSV_HEADER
    assert len(list(out.glob("snapshot_*.vtk"))) == 3
    assert "F^D (volume):" in (out / "summary.txt").read_text()


def test_eval_and_mesh_info(tmp_path, capsys):
    cfg = small_cfg(tmp_path)
    assert main(["eval", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "F^D (volume):" in out and "R:" in out
    assert main(["mesh-info", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "vertices:" in out and "area: 0.68" in out


def test_eval_from_snapshot(tmp_path, capsys):
    cfg = small_cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--max-steps", "0", "--quiet"]) == 0
    capsys.readouterr()
    snap = tmp_path / "out" / "snapshot_00000.vtk"
    assert main(["eval", "--config", str(cfg), "--phi", str(snap)]) == 0
    assert main(["mesh-info", "--vtk", str(snap)]) == 0
