"""Output formats: CSV history, legacy VTK snapshots, text summary."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import TriMesh, _with_boundary, write_vtk

CSV_HEADER = ("step,tau,mu,gamma,J_total,J_porous,J_GL,J_force,FD_vol,FD_surf,"
              "FL_vol,R,mass_err,com_y")
CSV_FIELDS = tuple(CSV_HEADER.split(","))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(rows, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in rows:
                fh.write(",".join(_fmt(r[k]) for k in CSV_FIELDS) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def snapshot_fields(mesh: TriMesh, phi, w, state=None, adjoint=None) -> dict:
    """Vertex values of all fields (P2 fields restricted to vertex dofs)."""
    n = mesh.n_vertices
    data = {"phi": phi, "w": w}
    zeros2 = np.zeros((n, 2))
    data["u"] = state.u[:, :n].T if state is not None else zeros2
    data["p"] = state.p if state is not None else np.zeros(n)
    data["q"] = adjoint.q[:, :n].T if adjoint is not None else zeros2
    data["pi"] = adjoint.pi if adjoint is not None else np.zeros(n)
    return data


def write_snapshot(path, mesh, phi, w, state=None, adjoint=None) -> Path:
    path = Path(path)
    try:
        write_vtk(path, mesh, snapshot_fields(mesh, phi, w, state, adjoint))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_vtk(path):
    """Minimal reader for the legacy ASCII files written by this package.

    Returns ``(mesh, point_data)``.
    """
    tokens = Path(path).read_text().split("\n")
    it = iter(tokens)
    pts, tris, data = None, None, {}
    n = 0
    for line in it:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            pts = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
        elif key == "CELLS":
            m = int(parts[1])
            tris = np.array([[int(v) for v in next(it).split()[1:4]] for _ in range(m)])
        elif key == "SCALARS":
            next(it)  # lookup table
            data[parts[1]] = np.array([float(next(it)) for _ in range(n)])
        elif key == "VECTORS":
            data[parts[1]] = np.array([[float(v) for v in next(it).split()[:2]]
                                       for _ in range(n)])
    if pts is None or tris is None:
        raise ValueError(f"{path}: not an unstructured triangle grid")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mesh = _with_boundary(pts, tris.astype(np.int64), np.zeros(len(tris), dtype=np.int64),
                          (lo[0], lo[1], hi[0], hi[1]))
    return mesh, data


def sig5(x: float) -> str:
    """Five significant digits."""
    return format(float(x), ".5g") if np.isfinite(x) else "nan"


def summary_text(traj, config) -> str:
    first, last = traj.rows[0], traj.rows[-1]
    lines = [
        f"steps: {int(last['step'])}",
        f"objective: {config.functional.kind}",
        f"modulation: {config.model.modulation}",
        f"F^D (volume): {sig5(last['FD_vol'])}",
        f"F^D (surface): {sig5(last['FD_surf'])}",
        f"F^L (volume): {sig5(last['FL_vol'])}",
        f"R: {sig5(last['R'])}",
        f"initial F^D (volume): {sig5(first['FD_vol'])}",
        f"initial R: {sig5(first['R'])}",
        f"J_total: {sig5(last['J_total'])}",
        f"max mass error: {sig5(max(r['mass_err'] for r in traj.rows))}",
        f"com_y drift: {sig5(last['com_y'] - first['com_y'])}",
    ]
    if traj.final is not None:
        lines.append(f"final mesh: {traj.final.mesh.n_vertices} vertices, "
                     f"{traj.final.mesh.n_triangles} triangles")
    return "\n".join(lines) + "\n"


def write_outputs(traj, config) -> dict:
    """Write CSV history, VTK snapshots and the summary into ``output.dir``."""
    out = Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"csv": write_csv(traj.rows, out / config.output.csv), "vtk": []}
    for k, mesh, phi, w, state, adj in traj.snapshots:
        files["vtk"].append(write_snapshot(out / f"{config.output.vtk_prefix}_{k:05d}.vtk",
                                           mesh, phi, w, state, adj))
    summary = out / config.output.summary
    summary.write_text(summary_text(traj, config))
    files["summary"] = summary
    return files
