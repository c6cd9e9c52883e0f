import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfopt.config import ConfigError, RunConfig, load_config, save_config
from pfopt.io import CSV_HEADER, read_vtk, sig5, summary_text, write_outputs, write_snapshot
from pfopt.optimizer import circle_phi, run_optimization
from tests.conftest import unit_square


def tiny_config(tmp_path, steps=1) -> RunConfig:
    """Coarse channel run that finishes in a few seconds."""
    cfg = RunConfig()
    cfg.mesh.h0, cfg.mesh.adapt = 0.05, False
    cfg.model.eps, cfg.model.alpha_bar, cfg.model.mu = 0.02, 0.24, 0.1
    cfg.schedule.mu_start, cfg.schedule.stages = 0.1, 1
    cfg.stepping.max_steps = steps
    cfg.output.dir = str(tmp_path)
    cfg.output.vtk_every = 1
    return cfg.validate()


# ------------------------------------------------------------ config files

def test_paper_configs():
    d = load_config("drag_paper.cfg")
    assert (d.model.eps, d.model.alpha_bar, d.model.mu, d.model.gamma) == (2.5e-4, 0.03, 0.001, 0.01)
    assert (d.domain.width, d.domain.height) == (1.7, 0.4)
    assert (d.obstacle.shape, d.obstacle.radius, d.obstacle.center) == ("circle", 0.05, [0.5, 0.2])
    r = load_config("liftdrag_paper.cfg")
    assert (r.model.eps, r.model.alpha_bar, r.model.gamma) == (5e-4, 4.0, 0.3)
    assert r.model.mu == pytest.approx(1 / 15, rel=1e-15)
    assert r.functional.kind == "ratio"


def test_empty_file_round_trip(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p, environ={})
    assert cfg == RunConfig()
    out = tmp_path / "echo.cfg"
    save_config(cfg, out)
    assert load_config(out, environ={}) == cfg


@pytest.mark.parametrize("name", ["drag_paper.cfg", "liftdrag_paper.cfg", "drag_desk.cfg",
                                  "liftdrag_desk.cfg", "coarse_drag.cfg"])
def test_shipped_config_round_trip(name, tmp_path):
    cfg = load_config(name, environ={})
    save_config(cfg, tmp_path / name)
    assert load_config(tmp_path / name, environ={}) == cfg


@settings(max_examples=30, deadline=None)
@given(eps=st.floats(1e-5, 1.0), mu=st.floats(1e-4, 10.0), steps=st.integers(0, 10 ** 6),
       modulation=st.sampled_from(["sqrt_psi", "half"]), com=st.sampled_from(["auto", "on", "off"]))
def test_config_round_trip_property(tmp_path_factory, eps, mu, steps, modulation, com):
    cfg = RunConfig()
    cfg.model.eps, cfg.model.mu, cfg.model.modulation = eps, mu, modulation
    cfg.stepping.max_steps, cfg.constraints.com_y = steps, com
    path = tmp_path_factory.mktemp("cfg") / "c.cfg"
    save_config(cfg.validate(), path)
    assert load_config(path, environ={}) == cfg


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(json.dumps({"model": {"epsilon": 0.1}}))
    with pytest.raises(ConfigError, match="epsilon"):
        load_config(p, environ={})


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "broken.cfg"
    p.write_text('{\n  "model": {"eps": 0.1,}\n}\n')
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        load_config(p, environ={})


@pytest.mark.parametrize("section,key,value", [("model", "eps", -1.0),
                                                ("model", "modulation", "cubic"),
                                                ("mesh", "dorfler", 1.5)])
def test_validation_names_field(tmp_path, section, key, value):
    p = tmp_path / "v.cfg"
    p.write_text(json.dumps({section: {key: value}}))
    with pytest.raises(ConfigError, match=key):
        load_config(p, environ={})


def test_env_override(tmp_path):
    p = tmp_path / "e.cfg"
    p.write_text(json.dumps({"model": {"eps": 0.1}}))
    cfg = load_config(p, environ={"PFOPT_MODEL_EPS": "0.02", "PFOPT_SEED": "7",
                                  "PFOPT_FUNCTIONAL_KIND": "ratio"})
    assert (cfg.model.eps, cfg.seed, cfg.functional.kind) == (0.02, 7, "ratio")


# --------------------------------------------------------------------- VTK

def independent_vtk_points(path):
    """Separate reader: token stream, no shared code with the package."""
    tok = open(path).read().split()
    i = tok.index("POINTS")
    n = int(tok[i + 1])
    xyz = np.array(tok[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
    j = tok.index("phi")
    assert tok[j - 1] == "SCALARS" and tok[j + 3:j + 5] == ["LOOKUP_TABLE", "default"]
    phi = np.array(tok[j + 5:j + 5 + n], dtype=float)
    return xyz, phi


def test_vtk_round_trip(tmp_path):
    mesh = unit_square(0.1)
    x, y = mesh.vertices.T
    phi = np.tanh((np.hypot(x - 0.4, y - 0.6) - 0.25) / 0.07) + 1e-13 * math.pi
    w = np.sin(7 * x) * y
    path = write_snapshot(tmp_path / "s.vtk", mesh, phi, w)
    xyz, phi_ind = independent_vtk_points(path)
    assert np.max(np.abs(xyz[:, :2] - mesh.vertices)) <= 1e-12
    assert np.max(np.abs(phi_ind - phi)) <= 1e-12
    mesh2, data = read_vtk(path)
    assert np.array_equal(mesh2.triangles, mesh.triangles)
    assert np.max(np.abs(data["phi"] - phi)) <= 1e-12
    assert np.max(np.abs(data["w"] - w)) <= 1e-12
    assert data["u"].shape == (mesh.n_vertices, 2)


# ---------------------------------------------------------------- outputs

@pytest.fixture(scope="module")
def one_step(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    traj = run_optimization(cfg)
    files = write_outputs(traj, cfg)
    return cfg, traj, files


def test_csv_header_and_rows(one_step):
    _, _, files = one_step
    lines = files["csv"].read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert CSV_HEADER == ("step,tau,mu,gamma,J_total,J_porous,J_GL,J_force,FD_vol,FD_surf,"
                          "FL_vol,R,mass_err,com_y")
    assert len(lines) == 3
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1"]


def test_vtk_snapshots_written(one_step):
    _, traj, files = one_step
    assert len(files["vtk"]) == 2
    mesh, data = read_vtk(files["vtk"][-1])
    assert set(data) == {"phi", "w", "u", "p", "q", "pi"}
    assert np.allclose(data["phi"], traj.final.phi, atol=1e-12)


def test_summary_five_significant_digits(one_step):
    cfg, traj, files = one_step
    text = files["summary"].read_text()
    assert text == summary_text(traj, cfg)
    line = next(ln for ln in text.splitlines() if ln.startswith("F^D (volume):"))
    value = line.split(":")[1].strip()
    assert value == format(traj.rows[-1]["FD_vol"], ".5g")
    assert len(value.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 5


def test_sig5_examples():
    assert sig5(0.039454123) == "0.039454"
    assert sig5(1.11044) == "1.1104"
    assert sig5(float("nan")) == "nan"


def test_determinism(tmp_path):
    a = write_outputs(run_optimization(tiny_config(tmp_path / "a")), tiny_config(tmp_path / "a"))
    b = write_outputs(run_optimization(tiny_config(tmp_path / "b")), tiny_config(tmp_path / "b"))
    assert a["csv"].read_bytes() == b["csv"].read_bytes()


def test_output_error_names_path(tmp_path, one_step):
    _, traj, _ = one_step
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = tiny_config(blocker / "sub")
    with pytest.raises(OSError, match="file"):
        write_outputs(traj, cfg)


def test_circle_phi_is_nodal_profile():
    mesh = unit_square(0.1)
    phi = circle_phi(mesh, (0.5, 0.5), 0.2, 0.05)
    assert np.all(np.abs(phi) <= 1.0)
    assert phi[np.argmin(np.hypot(*(mesh.vertices - 0.5).T))] == -1.0
