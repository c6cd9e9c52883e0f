"""Mass-conserving H^-1 gradient flow (Cahn-Hilliard type) for the phase field.

One step of the flow, given ``phi^k``:

1. solve the state at ``phi^k`` and the adjoint,
2. assemble the functional source ``J_phi``,
3. solve the implicit/explicit split Cahn-Hilliard system for
   ``(phi^{k+1}, w^{k+1})`` by semismooth Newton.

The module also hosts the finite-difference gradient oracle, mesh
adaptation around the interface and the full optimization loop.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from matplotlib.tri import LinearTriInterpolator, Triangulation

from . import fem, mesh as meshmod
from .adjoint import (AdjointFields, FunctionalLinearization, linearize_functional,
                      reduced_gradient, solve_adjoint)
from .fem import get_space
from .flow import InflowProfile, NewtonSettings, StateFields, solve_state
from .functionals import (NoInterfaceError, Objective, ObjectiveValue,
                          eval_force_surface, eval_objective, gl_energy)
from .material import Material, PotentialParams, alpha_dd, d2psi_plus, psi_family
from .mesh import TriMesh

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    pass


# ------------------------------------------------------------------ schedule

@dataclass
class Schedule:
    """Piecewise-constant path-following for mu and gamma.

    Each list holds ``(value, steps)`` pairs; a stage lasts ``steps`` flow
    steps and the last stage persists indefinitely.
    """

    mu: list
    gamma: list

    def __post_init__(self):
        for name in ("mu", "gamma"):
            stages = [(float(v), int(n)) for v, n in getattr(self, name)]
            if not stages:
                raise ValueError(f"{name} schedule is empty")
            if any(v <= 0 for v, _ in stages) or any(n < 0 for _, n in stages):
                raise ValueError(f"{name} schedule needs positive values")
            setattr(self, name, stages)

    @staticmethod
    def _at(stages, step):
        acc = 0
        for v, n in stages:
            acc += n
            if step < acc:
                return v
        return stages[-1][0]

    def at(self, step: int) -> tuple[float, float]:
        return self._at(self.mu, step), self._at(self.gamma, step)

    def final_stage_start(self) -> int:
        return max(sum(n for _, n in self.mu[:-1]), sum(n for _, n in self.gamma[:-1]))

    @staticmethod
    def geometric(start: float, target: float, stages: int, steps: int) -> list:
        """``stages`` values from ``start`` to ``target`` in geometric progression."""
        if stages <= 1 or start == target:
            return [(target, steps)]
        vals = np.geomspace(start, target, stages)
        return [(float(v), steps) for v in vals[:-1]] + [(float(target), steps)]


@dataclass
class OptState:
    mesh: TriMesh
    phi: np.ndarray
    w: np.ndarray
    step: int = 0
    tau: float = 0.0
    mu: float = 1.0
    gamma: float = 1.0
    mass_target: float = 0.0
    com_target: float | None = None
    moment_target: float | None = None


@dataclass
class CHSettings:
    tol: float = 1e-10
    max_iter: int = 100
    max_retries: int = 6
    jphi_form: str = "auto"        # auto | weak | explicit | rewritten
    com_constraint: bool = False
    max_halvings: int = 12


# ------------------------------------------------------------ step helpers

def p1_mass(mesh: TriMesh) -> sp.csr_matrix:
    return fem.assemble(mesh, "mass", "P1")


def adaptive_tau(mesh: TriMesh, w, xi: float = 5.0, tau_max: float = 1.0,
                 floor: float = 1e-14) -> float:
    """``xi * min_T h_T / ||grad w||_{L2(T)}`` over triangles with a
    nonnegligible gradient; ``tau_max`` if there are none."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    g = meshmod.p1_gradients(mesh, np.asarray(w, dtype=float))
    local = np.linalg.norm(g, axis=1) * np.sqrt(mesh.areas)
    ok = local >= floor
    if not ok.any():
        return float(tau_max)
    return float(xi * np.min(mesh.diameters[ok] / local[ok]))


@dataclass
class JphiLoad:
    """Linear-in-phi^{k+1} source: ``(J_phi, zeta) = zeta . (matrix phi + vector)``."""

    matrix: sp.csr_matrix | None
    vector: np.ndarray


def assemble_Jphi(mesh: TriMesh, objective: Objective, phi_k, state: StateFields,
                  material: Material, lin: FunctionalLinearization | None = None,
                  form: str = "auto", f=None) -> JphiLoad:
    """Functional source of the gradient equation.

    ``weak``: ``int M'(phi^k) (D4h . grad phi^{k+1}) zeta + int M(phi^k) D4h . grad zeta``
    (the boundary term cancels against the natural condition).
    ``rewritten``: ``int M(phi^k) (f - alpha u - (u.grad)u) . a zeta`` which
    equals the weak form for the continuous state.  ``explicit``: the weak
    form with ``grad phi^k`` in the M' term, i.e. the exact derivative of the
    discrete force term at ``phi^k``.  ``auto`` uses the rewritten form for
    drag and the weak form otherwise.
    """
    fs = get_space(mesh)
    n = mesh.n_vertices
    if objective.kind == "none":
        return JphiLoad(None, np.zeros(n))
    if lin is None:
        lin = linearize_functional(mesh, objective, state, phi_k, material)
    if form == "auto":
        form = "rewritten" if objective.kind == "drag" else "weak"
    phq = fs.eval_p1(phi_k)
    m, dm = material.modulation(phq)
    if form == "rewritten":
        uq = fs.eval_vec(state.u)
        G = fs.grad_vec(state.u)
        a_q = material.alpha(phq)[0]
        conv = np.einsum("mqab,mqb->mqa", G, uq)
        force = -a_q[..., None] * uq - conv
        if f is not None:
            fx, fy = f(fs.xq[..., 0], fs.xq[..., 1])
            force = force + np.stack(np.broadcast_arrays(fx, fy, subok=False), axis=-1)
        return JphiLoad(None, fs.load_p1(m * (force @ lin.a)))
    if form not in ("weak", "explicit"):
        raise ValueError(f"unknown J_phi form {form!r}")
    vec = fs.load_p1_grad(m[..., None] * lin.D4h)
    if form == "explicit":
        gphi = fs.grad_p1(phi_k)
        return JphiLoad(None, vec + fs.load_p1(dm * np.einsum("me,mqe->mq", gphi, lin.D4h)))
    # matrix entries int M'(phi^k) N_i (D4h . grad N_j)
    adv = np.einsum("mqe,mke->mqk", lin.D4h, fs.dphi1)
    local = np.einsum("mq,qi,mqk->mik", dm * fs.wdet, fs.phi1, adv)
    mat = fs._matrix(mesh.triangles, mesh.triangles, local, (n, n))
    return JphiLoad(mat, vec)


def com_y(phi, mesh: TriMesh) -> float:
    """y-coordinate of the obstacle centre of mass, obstacle = (1 - phi)/2."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise ValueError("phase field does not live on this mesh")
    fs = get_space(mesh)
    ob = 0.5 * (1.0 - fs.eval_p1(phi))
    den = float(np.sum(ob * fs.wdet))
    if den <= 1e-14 * mesh.total_area:
        raise ValueError("empty obstacle")
    return float(np.sum(ob * fs.xq[..., 1] * fs.wdet)) / den


def apply_com_constraint(load, mesh: TriMesh, phi=None) -> np.ndarray:
    """Add ``lam * (int y N_i)`` so the H^-1 flow of the load keeps
    ``int phi y`` (hence com_y at fixed mass) stationary."""
    load = np.asarray(load, dtype=float)
    M = p1_mass(mesh)
    K = fem.assemble(mesh, "stiffness", "P1")
    y = mesh.vertices[:, 1]
    My = M @ y
    den = float(y @ (K @ y))
    if den <= 1e-300:
        warnings.warn("degenerate centre-of-mass linearization; constraint skipped")
        return load.copy()
    w = fem.solve_sparse(M, tol=1e-12, rhs=load)
    lam = -float(y @ (K @ w)) / den
    return load + lam * My


@dataclass
class CHResult:
    phi: np.ndarray
    w: np.ndarray
    tau: float
    iterations: int
    retries: int
    lam_com: float = 0.0


class CHSystem:
    """Residual and semismooth Jacobian of one Cahn-Hilliard step.

    Unknowns are ``z = [phi, w]`` (plus the centre-of-mass multiplier when
    ``com`` is set); ``alpha_q_coef`` is ``|u|^2`` at quadrature points.
    """

    def __init__(self, mesh, phi_k, tau, gw, material, const, alpha_q_coef,
                 jmat=None, com=False):
        self.mesh, self.phi_k, self.tau, self.gw = mesh, phi_k, tau, gw
        self.material, self.const, self.usq = material, const, alpha_q_coef
        self.jmat, self.com = jmat, com
        self.fs = get_space(mesh)
        self.n = mesh.n_vertices
        self.M = p1_mass(mesh)
        self.K = fem.assemble(self.fs, "stiffness", "P1")
        self.My = self.M @ mesh.vertices[:, 1]
        self.Mphik = self.M @ phi_k

    def split(self, z):
        n = self.n
        return z[:n], z[n:2 * n], (z[-1] if self.com else 0.0)

    @property
    def has_merit(self) -> bool:
        # the implicit transport term of the weak J_phi is not a gradient
        return self.jmat is None

    def _neumann_solve(self, r):
        """``x`` with ``K x = r``, ``int x = 0`` (``r`` of zero sum)."""
        if not hasattr(self, "_kfac"):
            ones = np.asarray(self.M.sum(axis=0)).ravel()
            A = sp.bmat([[self.K, sp.csr_matrix(ones[:, None])],
                         [sp.csr_matrix(ones[None, :]), None]], format="csc")
            self._kfac = splu(A)
        return self._kfac.solve(np.append(r, 0.0))[:self.n]

    def merit(self, z):
        """``(Phi, grad Phi)`` of the convex problem whose optimality system
        is this step: ``|phi - phi_k|^2_{H^-1} / (2 tau)`` plus the implicit
        energy plus the explicit load."""
        phi = self.split(z)[0]
        fs, mat = self.fs, self.material
        r = self.M @ (phi - self.phi_k)
        x = self._neumann_solve(r)
        phq = fs.eval_p1(phi)
        fam = psi_family(phq, mat.potential)
        a, da = mat.alpha(phq)
        Kphi = self.K @ phi
        val = (0.5 / self.tau * (x @ r) + 0.5 * self.gw * mat.eps * (phi @ Kphi)
               + float(np.sum((self.gw / mat.eps * fam[1] + 0.5 * a * self.usq) * fs.wdet))
               + self.const @ phi)
        grad = (self.M @ x / self.tau + self.gw * mat.eps * Kphi
                + fs.load_p1(self.gw / mat.eps * fam[3] + 0.5 * da * self.usq) + self.const)
        return val, grad

    def residual(self, z) -> np.ndarray:
        phi, w, lam = self.split(z)
        fs, mat = self.fs, self.material
        phq = fs.eval_p1(phi)
        dpp = psi_family(phq, mat.potential)[3]
        dal = mat.alpha(phq)[1]
        f1 = self.M @ phi - self.Mphik + self.tau * (self.K @ w)
        f2 = (-(self.M @ w) + self.gw * mat.eps * (self.K @ phi)
              + fs.load_p1(self.gw / mat.eps * dpp + 0.5 * dal * self.usq) + self.const)
        if self.jmat is not None:
            f2 = f2 + self.jmat @ phi
        if not self.com:
            return np.concatenate([f1, f2])
        return np.concatenate([f1, f2 + lam * self.My, [self.My @ (phi - self.phi_k)]])

    def jacobian(self, z) -> sp.csr_matrix:
        phi = self.split(z)[0]
        mat = self.material
        phq = self.fs.eval_p1(phi)
        coef = (self.gw / mat.eps * d2psi_plus(phq, mat.potential)
                + 0.5 * alpha_dd(phq, mat.interp) * self.usq)
        D = fem.assemble(self.fs, "weighted_mass", "P1", coefficient=coef)
        J22 = self.gw * mat.eps * self.K + D
        if self.jmat is not None:
            J22 = J22 + self.jmat
        M, K, tau = self.M, self.K, self.tau
        if not self.com:
            return sp.bmat([[M, tau * K], [J22, -M]], format="csr")
        col = sp.csr_matrix(self.My[:, None])
        return sp.bmat([[M, tau * K, None], [J22, -M, col], [col.T, None, None]],
                       format="csr")


def _ch_line_search(system: CHSystem, z, dz, res: float, settings) -> float:
    """Step length for the semismooth Newton direction ``-dz``.

    A full step that halves the residual is taken as is.  Otherwise the
    convex merit is minimised along the ray when there is one; otherwise Armijo on
    the residual norm, taking the full step if nothing decreases it (the
    norm is not a reliable merit across the kinks; max_iter bounds cycling).
    """
    n = system.n
    if system.has_merit:
        # full steps that shrink the residual are kept: near the root the
        # merit decrease drops below its rounding error
        if np.linalg.norm(system.residual(z - dz)) <= 0.5 * res:
            return 1.0
        val, grad = system.merit(z)
        slope = -float(grad @ dz[:n])
        if slope < 0:
            # the merit is convex along the ray: minimise it on [0, 1]
            r = optimize.minimize_scalar(lambda t: system.merit(z - t * dz)[0],
                                         bounds=(0.0, 1.0), method="bounded",
                                         options={"xatol": 1e-4})
            if r.fun < val:
                return float(r.x)
        return 1.0
    t = 1.0
    for _ in range(settings.max_halvings + 1):
        if np.linalg.norm(system.residual(z - t * dz)) <= (1.0 - 1e-4 * t) * res:
            return t
        t *= 0.5
    return 1.0


def _ch_newton(system: CHSystem, z, settings, full_steps: bool = False):
    n = system.n
    F = system.residual(z)
    scale = max(1.0, float(np.linalg.norm(system.const)))
    for it in range(settings.max_iter + 1):
        res = float(np.linalg.norm(F))
        log.debug("CH Newton it %d: residual %.3e", it, res)
        if res <= settings.tol * scale:
            return z, it
        if it == settings.max_iter:
            break
        try:
            dz = fem.solve_sparse(system.jacobian(z), tol=1e-9, rhs=F)
        except fem.SolverError as exc:
            raise StepError(f"Cahn-Hilliard Newton matrix singular: {exc}") from exc
        t = 1.0 if full_steps else _ch_line_search(system, z, dz, res, settings)
        Fc = system.residual(z - t * dz)
        z = z - t * dz
        F = Fc
        if t == 1.0 and np.max(np.abs(dz[:n])) <= 1e-14 and np.linalg.norm(F) <= 1e3 * settings.tol * scale:
            return z, it + 1
    raise StepError(f"Cahn-Hilliard Newton did not converge (residual {res:.3e})")


def _ch_continuation(system: CHSystem, z0, settings):
    """Merit-globalized Newton through ``s' = 1e2, 1e3, ..., s``, warm started."""
    s_final = system.material.potential.s
    z, total = z0, 0
    stages = [s for s in 10.0 ** np.arange(2, np.ceil(np.log10(s_final))) if s < s_final]
    for s_stage in stages + [s_final]:
        if s_stage == s_final:
            stage = system
        else:
            mat = replace(system.material, potential=PotentialParams(float(s_stage)))
            stage = CHSystem(system.mesh, system.phi_k, system.tau, system.gw, mat,
                             system.const, system.usq, system.jmat, system.com)
        z, it = _ch_newton(stage, z, settings)
        total += it
    return z, total


def _ch_solve(system: CHSystem, w_k, settings):
    """Newton solve of one step with two fallbacks.

    When the step pushes many nodes across the kinks of ``psi_+`` the merit
    line search accepts only tiny steps.  The fallbacks are plain
    semismooth Newton (full steps, the primal-dual active set iteration)
    and continuation in the penalty: solve with ``s' = 1e2, 1e3, ...`` and
    warm start the next stage.
    """
    z0 = np.concatenate([system.phi_k, w_k] + ([[0.0]] if system.com else []))
    try:
        return _ch_newton(system, z0, settings)
    except StepError as exc:
        log.info("%s; retrying with full semismooth steps", exc)
    try:
        return _ch_newton(system, z0, settings, full_steps=True)
    except (StepError, fem.SolverError) as exc:
        s_final = system.material.potential.s
        if s_final <= 1e2:
            raise StepError(str(exc)) from exc
        log.info("%s; retrying with penalty continuation", exc)
    return _ch_continuation(system, z0, settings)


def ch_step(opt: OptState, state: StateFields | None, adjoint: AdjointFields | None,
            jphi: JphiLoad | None, material: Material, objective: Objective,
            settings: CHSettings = CHSettings()) -> CHResult:
    """One implicit/explicit split step of the Cahn-Hilliard flow.

    ``psi_+'`` and ``alpha'`` in the ``|u|^2/2`` term are implicit, ``psi_-'``
    and ``alpha'`` in the ``u.q`` term explicit.  Passing ``state=None``
    switches all flow couplings off (pure Ginzburg-Landau flow).
    If Newton fails even with penalty continuation, the step is retried with
    half the time step.
    """
    mesh = opt.mesh
    fs = get_space(mesh)
    phk = fs.eval_p1(opt.phi)
    gw = objective.gl_weight(material)
    fam = psi_family(phk, material.potential)
    dens = gw / material.eps * fam[4]
    usq = np.zeros_like(phk)
    if state is not None:
        uq = fs.eval_vec(state.u)
        if objective.porous:
            usq = np.einsum("mqe,mqe->mq", uq, uq)
        if adjoint is not None:
            qq = fs.eval_vec(adjoint.q)
            dens = dens - material.alpha(phk)[1] * np.einsum("mqe,mqe->mq", uq, qq)
    const = fs.load_p1(dens)
    jmat = None
    if jphi is not None:
        const = const + jphi.vector
        jmat = jphi.matrix
    tau = opt.tau
    if tau <= 0:
        raise ValueError("time step must be positive")
    last = None
    for retry in range(settings.max_retries + 1):
        try:
            system = CHSystem(mesh, opt.phi, tau, gw, material, const, usq, jmat,
                              settings.com_constraint)
            z, it = _ch_solve(system, opt.w, settings)
            phi, w, lam = system.split(z)
            return CHResult(phi, w, tau, it, retry, lam)
        except StepError as exc:
            last = exc
            log.info("step rejected at tau=%g: %s", tau, exc)
            tau *= 0.5
    raise StepError(f"step failed after {settings.max_retries} halvings: {last}")


# ------------------------------------------------------------- phase fields

def circle_phi(mesh: TriMesh, center, radius: float, eps: float) -> np.ndarray:
    """Obstacle-profile circle: ``sin`` of the scaled signed distance, clamped."""
    x, y = mesh.vertices.T
    d = np.hypot(x - center[0], y - center[1]) - radius
    return np.sin(np.clip(d / eps, -np.pi / 2, np.pi / 2))


def interpolate_p1(src: TriMesh, values, dst: TriMesh) -> np.ndarray:
    """Linear interpolation of a P1 field onto the vertices of another mesh."""
    tri = Triangulation(src.vertices[:, 0], src.vertices[:, 1], src.triangles)
    out = LinearTriInterpolator(tri, np.asarray(values, dtype=float))(
        dst.vertices[:, 0], dst.vertices[:, 1])
    vals = np.ma.filled(out, np.nan)
    bad = np.isnan(vals)
    if bad.any():
        # round-off misses on the boundary: nearest source vertex
        d = dst.vertices[bad][:, None, :] - src.vertices[None, :, :]
        vals[bad] = np.asarray(values)[np.argmin((d ** 2).sum(-1), axis=1)]
    return vals


def restore_moments(mesh: TriMesh, phi, mass: float, moment: float | None = None) -> np.ndarray:
    """Correct ``phi`` inside the interface so ``int phi`` (and optionally
    ``int phi y``) match targets exactly."""
    phi = np.asarray(phi, dtype=float)
    M = p1_mass(mesh)
    wgt = np.clip(1.0 - phi ** 2, 0.0, 1.0)
    if float(M.sum(axis=0).A1 @ wgt) < 1e-12 * mesh.total_area:
        wgt = np.ones_like(phi)
    one = np.ones_like(phi)
    y = mesh.vertices[:, 1]
    basis = [wgt] if moment is None else [wgt, wgt * (y - y.mean())]
    tests = [one] if moment is None else [one, y]
    targets = [mass] if moment is None else [mass, moment]
    A = np.array([[t @ (M @ b) for b in basis] for t in tests])
    r = np.array([tg - t @ (M @ phi) for t, tg in zip(tests, targets)])
    c = np.linalg.solve(A, r)
    return phi + sum(ci * b for ci, b in zip(c, basis))


def adapt_mesh(coarse: TriMesh, fields, h_min: float, fraction: float = 0.5,
               max_passes: int | None = None, band: float | None = 0.99) -> TriMesh:
    """Refine ``coarse`` by Dörfler marking of the jump indicator.

    ``fields(mesh)`` returns the nodal fields whose normal-derivative jumps
    drive refinement (squared indicators are summed).  Triangles whose
    diameter is already at most ``h_min`` are never marked.

    If ``band`` is set, the first field is taken as the phase field and every
    refinable triangle with a vertex in ``|phi| < band`` is marked as well, so
    that the diffuse interface always ends up at ``h_min`` (a large chemical
    potential jump otherwise absorbs the Dörfler bulk).
    """
    if max_passes is None:
        ratio = max(coarse.diameters.max() / h_min, 1.0)
        max_passes = 2 * int(np.ceil(np.log2(ratio))) + 2
    mesh = coarse
    for _ in range(max_passes):
        vals = fields(mesh)
        eta2 = sum(meshmod.jump_indicator(mesh, f) ** 2 for f in vals)
        total = eta2.sum()
        refinable = mesh.diameters > h_min * (1 + 1e-9)
        eta2 = np.where(refinable, eta2, 0.0)
        extra = np.zeros(0, dtype=int)
        if band is not None:
            inside = np.min(np.abs(vals[0])[mesh.triangles], axis=1) < band
            extra = np.flatnonzero(inside & refinable)
        if total > 0 and eta2.sum() > 1e-8 * total:
            marked = np.union1d(meshmod.dorfler_mark(np.sqrt(eta2), fraction), extra)
        else:
            marked = extra
        if len(marked) == 0:
            break
        mesh = meshmod.refine(mesh, marked)
    return mesh


# ------------------------------------------------------------ gradient check

@dataclass
class GradientCheckReport:
    seed: int
    deltas: list
    analytic: float
    fd: list
    rel_errors: list
    margin: float = np.nan

    @property
    def min_rel_error(self) -> float:
        return float(np.min(self.rel_errors)) if self.rel_errors else np.nan


def default_direction(mesh: TriMesh, phi, seed: int = 0, amplitude: float = 0.8,
                      center=None, width: float = 0.04) -> np.ndarray:
    """Smooth zero-mean perturbation localized around the interface.

    The amplitude stays below one so that ``phi +- delta zeta`` with
    ``delta <= 1e-6`` does not cross the kinks of the relaxed potential
    at ``|phi| = 1 - 1/s`` from nodes that sit exactly on the wells.
    """
    rng = np.random.default_rng(seed)
    x, y = mesh.vertices.T
    if center is None:
        inside = np.asarray(phi) < 0
        center = mesh.vertices[inside].mean(axis=0) if inside.any() else mesh.vertices.mean(axis=0)
    zeta = np.zeros(mesh.n_vertices)
    for _ in range(3):
        c = np.asarray(center) + rng.uniform(-1, 1, 2) * width
        k = rng.uniform(10, 40, 2)
        zeta += (rng.uniform(-1, 1) * np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / width ** 2)
                 * np.cos(k[0] * x + k[1] * y))
    mass = p1_mass(mesh).sum(axis=0).A1
    bump = np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / width ** 2)
    zeta -= (mass @ zeta) / (mass @ bump) * bump
    return amplitude * zeta / np.abs(zeta).max()


def reduced_objective(mesh, phi, material, objective, mu, f=None, g=None,
                      initial=None, settings=NewtonSettings()):
    state = solve_state(mesh, phi, material, mu, f, g, settings, initial=initial)
    return eval_objective(mesh, phi, state, objective, material), state


def gradient_check(mesh: TriMesh, phi, material: Material, objective: Objective,
                   mu: float, zeta=None, deltas=(1e-3, 1e-4, 1e-5, 1e-6), f=None,
                   g: InflowProfile | None = None, seed: int = 0) -> GradientCheckReport:
    """Compare the adjoint directional derivative with centered differences."""
    from .flow import uniqueness_margin

    phi = np.asarray(phi, dtype=float)
    if zeta is None:
        zeta = default_direction(mesh, phi, seed)
    val, state = reduced_objective(mesh, phi, material, objective, mu, f, g)
    lin = linearize_functional(mesh, objective, state, phi, material)
    adj = solve_adjoint(mesh, phi, state, lin, material, mu, f, g, porous=objective.porous)
    grad = reduced_gradient(mesh, phi, state, adj, lin, objective, material)
    analytic = float(grad @ zeta)
    fds, errs = [], []
    for d in deltas:
        jp = reduced_objective(mesh, phi + d * zeta, material, objective, mu, f, g, state)[0].total
        jm = reduced_objective(mesh, phi - d * zeta, material, objective, mu, f, g, state)[0].total
        fd = (jp - jm) / (2 * d)
        fds.append(fd)
        scale = max(abs(fd), abs(analytic))
        errs.append(abs(analytic - fd) / scale if scale > 0 else 0.0)
    return GradientCheckReport(seed, list(deltas), analytic, fds, errs,
                               uniqueness_margin(state, mu, mesh))


def fd_gradient_check(config, zeta=None, deltas=None) -> GradientCheckReport:
    """Gradient check at the initial design of a run configuration.

    Uses the target ``mu`` and ``gamma`` of the config on the (optionally
    adapted) initial mesh; ``zeta`` defaults to :func:`default_direction`.
    """
    from .config import build_components

    comp = build_components(config)
    mesh = comp.coarse_mesh
    if config.mesh.adapt:
        mesh = adapt_mesh(mesh, lambda m: [comp.initial_phi(m)], config.mesh.h_min,
                          config.mesh.dorfler)
    phi = comp.initial_phi(mesh)
    if zeta is None:
        zeta = default_direction(mesh, phi, config.seed, config.check.amplitude)
    deltas = config.check.deltas if deltas is None else deltas
    return gradient_check(mesh, phi, comp.material, comp.objective(config.model.gamma),
                          config.model.mu, zeta, tuple(deltas), comp.f, comp.g, config.seed)


# -------------------------------------------------------------- driver loop

@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    final: OptState | None = None
    state: StateFields | None = None
    adjoint: AdjointFields | None = None
    snapshots: list = field(default_factory=list)
    newton_counts: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


def _log_row(opt: OptState, state: StateFields, material: Material,
             objective: Objective, mass0: float, sampling: str) -> dict:
    val: ObjectiveValue = eval_objective(opt.mesh, opt.phi, state, objective, material)
    try:
        fd_surf = eval_force_surface(opt.mesh, opt.phi, state, objective.drag,
                                     sampling=sampling)
    except NoInterfaceError:
        fd_surf = np.nan
    mass = float(p1_mass(opt.mesh).sum(axis=0).A1 @ opt.phi)
    try:
        cy = com_y(opt.phi, opt.mesh)
    except ValueError:
        cy = np.nan
    return dict(step=opt.step, tau=opt.tau, mu=opt.mu, gamma=opt.gamma,
                J_total=val.total, J_porous=val.porous, J_GL=val.gl,
                J_force=val.force, FD_vol=val.FD, FD_surf=fd_surf, FL_vol=val.FL,
                R=val.ratio, mass_err=abs(mass - mass0) / opt.mesh.total_area,
                com_y=cy)


def run_optimization(config, callback=None) -> Trajectory:
    """Run the full gradient flow described by a :class:`RunConfig`.

    ``callback(step, opt, state)`` is called after each logged row.
    """
    from .config import build_components

    comp = build_components(config)
    material0: Material = comp.material
    sched: Schedule = comp.schedule
    st_cfg = config.stepping
    mcfg = config.mesh
    coarse = comp.coarse_mesh

    def init_fields(m):
        return [comp.initial_phi(m)]

    mesh = adapt_mesh(coarse, init_fields, mcfg.h_min, mcfg.dorfler) if mcfg.adapt else coarse
    phi = comp.initial_phi(mesh)
    mass0 = float(p1_mass(mesh).sum(axis=0).A1 @ phi)
    use_com = comp.com_constraint
    moment0 = float(mesh.vertices[:, 1] @ (p1_mass(mesh) @ phi)) if use_com else None
    mu, gamma = sched.at(0)
    opt = OptState(mesh, phi, np.zeros(mesh.n_vertices), 0, 0.0, mu, gamma, mass0,
                   com_y(phi, mesh) if use_com else None, moment0)
    ch_settings = CHSettings(st_cfg.ch_tol, st_cfg.ch_max_iter, st_cfg.max_retries,
                             config.functional.jphi_form, use_com)
    traj = Trajectory()
    state = None
    last_mesh_step = 0
    for k in range(st_cfg.max_steps + 1):
        opt.step = k
        opt.mu, opt.gamma = sched.at(k)
        objective = comp.objective(opt.gamma)
        material = material0
        # periodic re-meshing from the coarsest mesh
        if mcfg.adapt and k > 0 and k - last_mesh_step >= mcfg.adapt_every:
            old = opt.mesh
            phi_old, w_old = opt.phi, opt.w
            new = adapt_mesh(coarse, lambda m: [interpolate_p1(old, phi_old, m),
                                               interpolate_p1(old, w_old, m)],
                             mcfg.h_min, mcfg.dorfler)
            phi_new = restore_moments(new, interpolate_p1(old, phi_old, new),
                                      opt.mass_target, opt.moment_target)
            opt.mesh, opt.phi, opt.w = new, phi_new, interpolate_p1(old, w_old, new)
            state = None
            last_mesh_step = k
        try:
            state = solve_state(opt.mesh, opt.phi, material, opt.mu, comp.f, comp.g,
                                comp.newton, initial=state)
        except Exception as exc:
            raise StepError(f"state solve failed at step {k}: {exc}") from exc
        row = _log_row(opt, state, material, objective, mass0,
                       config.functional.surface_sampling)
        traj.rows.append(row)
        traj.newton_counts.append(state.iterations)
        if callback is not None:
            callback(k, opt, state)
        snap = bool(config.output.vtk_every) and (k % config.output.vtk_every == 0
                                                  or k == st_cfg.max_steps)
        if k == st_cfg.max_steps:
            if snap:
                traj.snapshots.append((k, opt.mesh, opt.phi.copy(), opt.w.copy(), state, None))
            break
        lin = linearize_functional(opt.mesh, objective, state, opt.phi, material)
        adj = solve_adjoint(opt.mesh, opt.phi, state, lin, material, opt.mu, comp.f,
                            comp.g, porous=objective.porous)
        if snap:
            traj.snapshots.append((k, opt.mesh, opt.phi.copy(), opt.w.copy(), state, adj))
        if k == 0:
            grad = reduced_gradient(opt.mesh, opt.phi, state, adj, lin, objective, material)
            opt.w = fem.solve_sparse(p1_mass(opt.mesh), tol=1e-10, rhs=grad)
        jphi = assemble_Jphi(opt.mesh, objective, opt.phi, state, material, lin,
                             ch_settings.jphi_form, comp.f)
        opt.tau = min(adaptive_tau(opt.mesh, opt.w, st_cfg.xi, st_cfg.tau_max), st_cfg.tau_max)
        res = ch_step(opt, state, adj, jphi, material, objective, ch_settings)
        opt.phi, opt.w, opt.tau = res.phi, res.w, res.tau
        traj.state, traj.adjoint = state, adj
        # stagnation in the H^-1 proxy ||grad w^{k+1}||
        if k >= sched.final_stage_start():
            gw = meshmod.p1_gradients(opt.mesh, opt.w)
            if np.sqrt(np.sum(np.einsum("ij,ij->i", gw, gw) * opt.mesh.areas)) < st_cfg.stagnation_tol:
                opt.step = k + 1
                state = solve_state(opt.mesh, opt.phi, material, opt.mu, comp.f, comp.g,
                                    comp.newton, initial=state)
                traj.rows.append(_log_row(opt, state, material, objective, mass0,
                                          config.functional.surface_sampling))
                break
    traj.final = opt
    traj.state = state
    return traj
