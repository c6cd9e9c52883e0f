"""Objective evaluation: diffuse-interface hydrodynamic force, its sharp
counterpart on the zero isoline, Ginzburg-Landau energy and the full
relaxed objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import get_space, p2_ref_gradients
from .flow import StateFields
from .material import Material
from .mesh import TriMesh

DRAG = (1.0, 0.0)
LIFT = (0.0, 1.0)


class DegenerateRatioError(ZeroDivisionError):
    pass


class NoInterfaceError(ValueError):
    pass


@dataclass(frozen=True)
class ForceFunctional:
    """Force in direction ``a`` (unit vector)."""

    direction: tuple = DRAG

    def __post_init__(self):
        a = np.asarray(self.direction, dtype=float)
        if a.shape != (2,) or abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError("force direction must be a unit 2-vector")

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=float)


@dataclass(frozen=True)
class Objective:
    """Relaxed objective ``porous + gl_weight * E_eps + force term``.

    ``kind`` is ``"drag"`` (force term F^D), ``"ratio"`` (force term
    ``-F^L / F^D``) or ``"none"`` (no force term).
    """

    kind: str = "drag"
    gamma: float = 0.01
    fold_c0: bool = True
    drag: tuple = DRAG
    lift: tuple = LIFT
    porous: bool = True
    gl: bool = True

    def __post_init__(self):
        if self.kind not in ("drag", "ratio", "none"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        ForceFunctional(self.drag)
        ForceFunctional(self.lift)

    def gl_weight(self, material: Material) -> float:
        if not self.gl:
            return 0.0
        return self.gamma if self.fold_c0 else self.gamma / (2.0 * material.c0)


@dataclass
class ObjectiveValue:
    porous: float
    gl_grad: float
    gl_pot: float
    force: float
    FD: float = np.nan
    FL: float = np.nan

    @property
    def gl(self) -> float:
        return self.gl_grad + self.gl_pot

    @property
    def total(self) -> float:
        return self.porous + self.gl_grad + self.gl_pot + self.force

    @property
    def ratio(self) -> float:
        return self.FL / self.FD if self.FD else np.nan


# ----------------------------------------------------------- pointwise fields

def stress_q(mesh: TriMesh, state: StateFields) -> np.ndarray:
    """Cauchy stress ``mu (grad u + grad u^T) - p I`` at quad points."""
    fs = get_space(mesh)
    G = fs.grad_vec(state.u)
    p = fs.eval_p1(state.p)
    sig = state.mu * (G + np.swapaxes(G, -1, -2))
    sig[..., 0, 0] -= p
    sig[..., 1, 1] -= p
    return sig


def force_density(mesh: TriMesh, phi, state: StateFields, a,
                  material: Material) -> np.ndarray:
    """``M(phi) grad phi . sigma a`` at quadrature points."""
    fs = get_space(mesh)
    m = material.modulation(fs.eval_p1(phi))[0]
    gphi = fs.grad_p1(phi)
    sa = stress_q(mesh, state) @ np.asarray(a, dtype=float)
    return m * np.einsum("me,mqe->mq", gphi, sa)


def eval_force_volume(mesh: TriMesh, phi, state: StateFields, functional,
                      material: Material) -> float:
    """Diffuse-interface force ``int M(phi) grad phi . sigma a``."""
    a = functional.a if isinstance(functional, ForceFunctional) else functional
    fs = get_space(mesh)
    return float(np.sum(force_density(mesh, phi, state, a, material) * fs.wdet))


def eval_ratio(mesh: TriMesh, phi, state: StateFields, material: Material,
               drag=DRAG, lift=LIFT) -> float:
    fd = eval_force_volume(mesh, phi, state, drag, material)
    if fd == 0.0:
        raise DegenerateRatioError("drag vanishes; ratio undefined")
    return eval_force_volume(mesh, phi, state, lift, material) / fd


def gl_energy(mesh: TriMesh, phi, material: Material) -> tuple[float, float]:
    """Gradient and potential parts of ``E_eps``."""
    fs = get_space(mesh)
    eps = material.eps
    g = fs.grad_p1(phi)
    grad_part = 0.5 * eps * float(np.sum(np.einsum("me,me->m", g, g) * fs.area))
    pot = material.psi(fs.eval_p1(phi))[0]
    return grad_part, float(np.sum(pot * fs.wdet)) / eps


def eval_objective(mesh: TriMesh, phi, state: StateFields, objective: Objective,
                   material: Material) -> ObjectiveValue:
    fs = get_space(mesh)
    porous = 0.0
    if objective.porous:
        a = material.alpha(fs.eval_p1(phi))[0]
        uq = fs.eval_vec(state.u)
        porous = 0.5 * float(np.sum(a * np.einsum("mqe,mqe->mq", uq, uq) * fs.wdet))
    w = objective.gl_weight(material)
    gg, gp = gl_energy(mesh, phi, material) if w else (0.0, 0.0)
    fd = eval_force_volume(mesh, phi, state, objective.drag, material)
    fl = eval_force_volume(mesh, phi, state, objective.lift, material)
    if objective.kind == "drag":
        force = fd
    elif objective.kind == "ratio":
        if fd == 0.0:
            raise DegenerateRatioError("drag vanishes; ratio undefined")
        force = -fl / fd
    else:
        force = 0.0
    return ObjectiveValue(porous, w * gg, w * gp, force, fd, fl)


# ------------------------------------------------------------------ isolines

@dataclass
class IsolineSet:
    """Zero-isoline segments of a P1 field, one per crossed triangle."""

    start: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    end: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.end - self.start, axis=1)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)


def extract_isoline(mesh: TriMesh, phi) -> IsolineSet:
    """Marching-triangles extraction of ``phi = 0``.

    Vertices with ``phi <= 0`` count as inside, so an isoline running along
    mesh edges is produced once, by the triangle on the positive side.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise ValueError("field does not live on this mesh")
    tri = mesh.triangles
    pos = phi[tri] > 0
    npos = pos.sum(axis=1)
    cut = np.flatnonzero((npos > 0) & (npos < 3))
    grads = get_space(mesh).grad_p1(phi)
    starts, ends, normals, tris = [], [], [], []
    skipped = 0
    for t in cut:
        pts = []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = tri[t, i], tri[t, j]
            if pos[t, i] != pos[t, j]:
                s = phi[a] / (phi[a] - phi[b])
                pts.append((1 - s) * mesh.vertices[a] + s * mesh.vertices[b])
        g = grads[t]
        gn = np.linalg.norm(g)
        if len(pts) != 2 or gn < 1e-14:
            skipped += 1
            continue
        starts.append(pts[0])
        ends.append(pts[1])
        normals.append(g / gn)
        tris.append(t)
    if not tris:
        return IsolineSet(skipped=skipped)
    return IsolineSet(np.array(starts), np.array(ends), np.array(normals),
                      np.array(tris, dtype=np.int64), skipped)


def _stress_at(mesh: TriMesh, state: StateFields, tris, points) -> np.ndarray:
    """Stress tensors at physical points inside the given triangles."""
    fs = get_space(mesh)
    p0 = mesh.vertices[mesh.triangles[tris, 0]]
    inv = fs.inv_jac[tris]
    ref = np.einsum("md,mde->me", points - p0, inv)   # (xi, eta)
    lam = np.column_stack([1 - ref.sum(axis=1), ref])
    out = np.empty((len(tris), 2, 2))
    cells = fs.p2.cells[tris]
    pv = state.p[mesh.triangles[tris]]
    for k in range(len(tris)):
        dref = p2_ref_gradients(lam[k:k + 1])[0]          # (6, 2)
        dphys = dref @ inv[k]
        G = np.stack([state.u[0, cells[k]] @ dphys, state.u[1, cells[k]] @ dphys])
        pk = pv[k] @ lam[k]
        out[k] = state.mu * (G + G.T) - pk * np.eye(2)
    return out


def eval_force_surface(mesh: TriMesh, phi, state: StateFields, a=DRAG,
                       isoline: IsolineSet | None = None,
                       sampling: str = "midpoint") -> float:
    """Sharp-interface force ``sum |seg| a . (sigma nu)`` on the zero isoline.

    ``nu`` is the P1 unit gradient of ``phi`` (pointing into the fluid).
    ``sampling`` picks where the stress of the containing triangle is
    evaluated: ``"midpoint"`` of the segment or the triangle ``"centroid"``.
    """
    iso = extract_isoline(mesh, phi) if isoline is None else isoline
    if len(iso) == 0:
        raise NoInterfaceError("no interface")
    if sampling == "midpoint":
        pts = iso.midpoints
    elif sampling == "centroid":
        pts = mesh.vertices[mesh.triangles[iso.triangles]].mean(axis=1)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    sig = _stress_at(mesh, state, iso.triangles, pts)
    traction = np.einsum("kij,kj->ki", sig, iso.normals)
    return float(np.sum(iso.lengths * (traction @ np.asarray(a, dtype=float))))
