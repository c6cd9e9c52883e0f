"""Stationary Navier-Stokes with Brinkman porosity on Taylor-Hood elements.

The unknown vector is ``[ux, uy, p, lam]`` where ``lam`` is the multiplier
of the zero-mean pressure constraint.  Residual rows for a test pair
``(v, eta)``::

    int alpha u.v + mu (grad u + grad u^T) : grad v + (u.grad)u.v - p div v - f.v
    -int eta div u + lam int eta
    int p

The symmetric-gradient viscous form makes the exact discrete transpose of
the Newton matrix coincide with the adjoint operator used for gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import SolverError, get_space
from .material import Material
from .mesh import TriMesh

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton iteration failed; carries the last residual and iterate."""

    def __init__(self, message, residual, iterate=None):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
        self.iterate = iterate


@dataclass
class InflowProfile:
    """Dirichlet datum ``g``.

    ``value`` is a constant 2-vector, a dict marker -> 2-vector or a
    callable ``(x, y) -> (gx, gy)``.  ``markers`` selects the Dirichlet
    part of the boundary (``None`` = all of it, the default).
    """

    value: object = (1.0, 0.0)
    markers: tuple | None = None

    def evaluate(self, xy: np.ndarray, marker=None) -> np.ndarray:
        v = self.value
        if callable(v):
            gx, gy = v(xy[:, 0], xy[:, 1])
            return np.stack([np.broadcast_to(gx, len(xy)),
                             np.broadcast_to(gy, len(xy))]).astype(float)
        if isinstance(v, dict):
            out = np.zeros((2, len(xy)))
            for k, mk in enumerate(marker):
                out[:, k] = v.get(mk, (0.0, 0.0))
            return out
        return np.tile(np.asarray(v, dtype=float)[:, None], (1, len(xy)))

    @property
    def all_dirichlet(self) -> bool:
        return self.markers is None

    def _edge_samples(self, mesh: TriMesh):
        e = mesh.boundary_edges
        a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
        mk = list(mesh.boundary_markers)
        return a, b, 0.5 * (a + b), [self.evaluate(pt, mk).T for pt in (a, b, 0.5 * (a + b))]

    def flux(self, mesh: TriMesh) -> float:
        """``int_{dOmega} g.nu`` by Simpson's rule per boundary edge."""
        a, b, mid, (ga, gb, gm) = self._edge_samples(mesh)
        t = b - a
        nu = np.stack([t[:, 1], -t[:, 0]], axis=1)
        # orient outward; the domain is a rectangle, hence convex
        flip = np.einsum("ij,ij->i", nu, mid - mesh.vertices.mean(axis=0)) < 0
        nu[flip] *= -1
        gavg = (ga + 4 * gm + gb) / 6.0
        return float(np.sum(np.einsum("ij,ij->i", gavg, nu)))

    def check_compatible(self, mesh: TriMesh) -> None:
        if not self.all_dirichlet:
            return
        x0, y0, x1, y1 = mesh.bounding_box
        perim = 2 * ((x1 - x0) + (y1 - y0))
        gmax = max(np.abs(v).max() for v in self._edge_samples(mesh)[3])
        if abs(self.flux(mesh)) > 1e-10 * perim * max(gmax, 1e-300):
            raise ValueError("boundary datum has nonzero net flux")


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-10
    max_iter: int = 25
    backtrack: float = 0.5
    max_halvings: int = 8
    picard: bool = False
    continuation_factor: float = 0.5
    max_continuation: int = 12

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class StateFields:
    u: np.ndarray                 # (2, n2)
    p: np.ndarray                 # (n1,)
    mu: float
    lam: float = 0.0
    iterations: int = 0
    residuals: list = field(default_factory=list)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.p, [self.lam]])


class FlowSystem:
    """Assembled pieces of the state operator for fixed mesh, phi and mu.

    Keeps the frozen linear part so Newton iterations and the adjoint only
    re-assemble the convection blocks.
    """

    def __init__(self, mesh: TriMesh, phi: np.ndarray, material: Material,
                 mu: float, f=None, g: InflowProfile | None = None):
        if mu <= 0:
            raise ValueError("viscosity must be positive")
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (mesh.n_vertices,):
            raise ValueError("phase field does not live on this mesh")
        self.mesh, self.phi, self.material, self.mu = mesh, phi, material, mu
        self.g = g if g is not None else InflowProfile()
        fs = self.space = get_space(mesh)
        n1, n2 = fs.n1, fs.n2
        self.n1, self.n2 = n1, n2
        self.alpha_q = material.alpha(fs.eval_p1(phi))[0]
        self.A0_alpha = fem.assemble(fs, "vector_weighted_mass", coefficient=self.alpha_q)
        self.A0 = self.A0_alpha + mu * fem.assemble(fs, "sym_stiffness")
        self.B = fem.assemble(fs, "divergence")
        self.mean_row = fs.vector_p1(np.repeat(fs.area[:, None] / 3.0, 3, axis=1))
        self.use_mean = self.g.all_dirichlet
        # body force
        self.F = np.zeros(2 * n2)
        if f is not None:
            fx, fy = f(fs.xq[..., 0], fs.xq[..., 1])
            self.F = np.concatenate([fs.load_p2(np.broadcast_to(fx, fs.wdet.shape)),
                                     fs.load_p2(np.broadcast_to(fy, fs.wdet.shape))])
        # Dirichlet dofs and values
        markers = self.g.markers
        bd = fs.p2_boundary_dofs(markers)
        self.bdofs = np.concatenate([bd, n2 + bd])
        xy = fs.p2_coords[bd]
        mk = self._dof_markers(bd)
        gv = self.g.evaluate(xy, mk)
        self.bvals = np.concatenate([gv[0], gv[1]])
        n = self.size
        mask = np.ones(n, dtype=bool)
        mask[self.bdofs] = False
        if not self.use_mean:
            mask[-1] = False
        self.free = np.flatnonzero(mask)

    @property
    def size(self) -> int:
        return 2 * self.n2 + self.n1 + 1

    def _dof_markers(self, dofs):
        mesh = self.mesh
        out = [None] * len(dofs)
        if not isinstance(self.g.value, dict):
            return out
        lookup = {}
        for (i, j), mk in zip(mesh.boundary_edges, mesh.boundary_markers):
            lookup.setdefault(int(i), mk)
            lookup.setdefault(int(j), mk)
        edge_mk = {}
        eid = {tuple(e): k for k, e in enumerate(mesh.edges)}
        for e, mk in zip(mesh.boundary_edges, mesh.boundary_markers):
            edge_mk[mesh.n_vertices + eid[tuple(sorted(e))]] = mk
        for k, d in enumerate(dofs):
            out[k] = lookup.get(int(d), edge_mk.get(int(d)))
        return out

    # residual / jacobian
    def split(self, x):
        n2, n1 = self.n2, self.n1
        return x[:2 * n2].reshape(2, n2), x[2 * n2:2 * n2 + n1], x[-1]

    def convection(self, u):
        return fem.assemble(self.space, "convection", velocity=u)

    def residual(self, x) -> np.ndarray:
        u, p, lam = self.split(x)
        C1 = self.convection(u)
        ru = self.A0 @ u.ravel() + C1 @ u.ravel() - self.B.T @ p - self.F
        rp = -self.B @ u.ravel() + lam * self.mean_row
        rl = self.mean_row @ p if self.use_mean else 0.0
        return np.concatenate([ru, rp, [rl]])

    def jacobian(self, u, picard: bool = False) -> sp.csr_matrix:
        A = self.A0 + self.convection(u)
        if not picard:
            A = A + fem.assemble(self.space, "convection_grad", velocity=u)
        m = sp.csr_matrix(self.mean_row[:, None])
        return sp.bmat([[A, -self.B.T, None],
                        [-self.B, None, m],
                        [None, m.T, None]], format="csr")

    def free_norm(self, r) -> float:
        return float(np.linalg.norm(r[self.free]))

    def solve_reduced(self, K, rhs) -> np.ndarray:
        """Solve ``K[free, free] x = rhs[free]`` with zero on fixed dofs."""
        Kf = K[self.free][:, self.free]
        out = np.zeros(self.size)
        out[self.free] = fem.solve_sparse(Kf, tol=1e-8, rhs=rhs[self.free])
        return out

    def lift(self, x=None) -> np.ndarray:
        x = np.zeros(self.size) if x is None else x.copy()
        x[self.bdofs] = self.bvals
        return x

    def stokes_guess(self) -> np.ndarray:
        x = self.lift()
        K = self.jacobian(np.zeros((2, self.n2)), picard=True)
        r = K @ x
        r[:2 * self.n2] -= self.F
        return x - self.solve_reduced(K, r)


def _newton(system: FlowSystem, x0: np.ndarray, settings: NewtonSettings):
    x = system.lift(x0)
    r = system.residual(x)
    res = system.free_norm(r)
    history = [res]
    for it in range(settings.max_iter + 1):
        if res <= settings.tol:
            return x, it, history
        if it == settings.max_iter:
            break
        u = system.split(x)[0]
        try:
            dx = system.solve_reduced(system.jacobian(u, settings.picard), r)
        except SolverError as exc:
            raise NewtonError("singular Newton matrix", res, x) from exc
        t = 1.0
        for _ in range(settings.max_halvings + 1):
            xt = x - t * dx
            rt = system.residual(xt)
            rest = system.free_norm(rt)
            if np.isfinite(rest) and rest < (1.0 - 1e-4 * t) * res:
                break
            t *= settings.backtrack
        else:
            # round-off floor: a tiny full step that cannot reduce further
            if np.linalg.norm(dx) <= 1e-12 * max(np.linalg.norm(x), 1.0) and res <= 1e3 * settings.tol:
                return x, it, history
            raise NewtonError("line search failed", res, x)
        x, r, res = xt, rt, rest
        history.append(res)
    raise NewtonError("Newton did not converge", res, x)


def solve_state(mesh: TriMesh, phi, material: Material, mu: float, f=None,
                g: InflowProfile | None = None,
                settings: NewtonSettings = NewtonSettings(),
                initial: StateFields | None = None,
                continuation: bool = True) -> StateFields:
    """Newton solve of the Brinkman-Navier-Stokes state for a frozen phase field.

    Parameters
    ----------
    mesh, phi : mesh and P1 phase field
    material : constitutive parameters (only alpha is used here)
    mu : viscosity
    f : callable ``(x, y) -> (fx, fy)`` body force, default zero
    g : Dirichlet datum, default ``(1, 0)`` on the whole boundary
    initial : previous state used as Newton guess, else a Stokes solve
    continuation : on failure, path-follow in mu from larger viscosities

    Raises
    ------
    NewtonError
        If no converged state is reached.
    """
    system = FlowSystem(mesh, phi, material, mu, f, g)
    system.g.check_compatible(mesh)
    if initial is not None and initial.u.shape == (2, system.n2):
        x0 = np.concatenate([initial.u.ravel(), initial.p, [initial.lam]])
    else:
        x0 = system.stokes_guess()
    try:
        x, it, hist = _newton(system, x0, settings)
    except NewtonError as exc:
        if not continuation:
            raise
        log.info("Newton failed at mu=%g (%s); path-following", mu, exc)
        x, it, hist = _continuation(mesh, phi, material, mu, f, g, settings)
    u, p, lam = system.split(x)
    return StateFields(u.copy(), p.copy(), mu, float(lam), it, hist)


def _continuation(mesh, phi, material, mu, f, g, settings):
    ladder = [mu]
    for _ in range(settings.max_continuation):
        ladder.append(ladder[-1] / settings.continuation_factor)
    # find the smallest viscosity that converges from a Stokes guess
    start = None
    for k in range(1, len(ladder)):
        sys_k = FlowSystem(mesh, phi, material, ladder[k], f, g)
        try:
            x, _, _ = _newton(sys_k, sys_k.stokes_guess(), settings)
            start = k
            break
        except NewtonError:
            continue
    if start is None:
        raise NewtonError("continuation found no convergent viscosity", np.inf)
    total = 0
    for k in range(start - 1, -1, -1):
        sys_k = FlowSystem(mesh, phi, material, ladder[k], f, g)
        x, it, hist = _newton(sys_k, x, settings)
        total += it
    return x, total, hist


def state_residual(state: StateFields, mesh: TriMesh, phi, material: Material,
                   mu: float, f=None, g: InflowProfile | None = None) -> float:
    """Euclidean norm of the assembled residual on non-Dirichlet rows."""
    system = FlowSystem(mesh, phi, material, mu, f, g)
    return system.free_norm(system.residual(state.vector))


def uniqueness_margin(state: StateFields, mu: float, mesh: TriMesh) -> float:
    """``mu / K_Omega - ||grad u||``; positive certifies uniqueness."""
    return mu / fem.k_omega(mesh.total_area, 2) - fem.grad_norm(mesh, state.u)
