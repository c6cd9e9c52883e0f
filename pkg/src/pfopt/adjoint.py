"""Adjoint system and reduced gradient of the relaxed objective.

The adjoint matrix is the exact transpose of the state Newton matrix, so
the gradient is the exact derivative of the discrete reduced objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .fem import get_space
from .flow import FlowSystem, InflowProfile, StateFields
from .functionals import (DegenerateRatioError, Objective, eval_force_volume,
                          stress_q)
from .material import Material, psi_family
from .mesh import TriMesh


@dataclass
class FunctionalLinearization:
    """Derivatives of the force integrand at quadrature points.

    ``D2h`` (M, nq, 2, 2) pairs with grad v, ``D3h`` (M, nq) with the
    pressure test function and ``D4h`` (M, nq, 2) with grad phi.  ``a`` is
    the effective force direction (a quotient-rule combination in ratio
    mode); ``m`` holds M(phi) at quadrature points.
    """

    D2h: np.ndarray
    D3h: np.ndarray
    D4h: np.ndarray
    a: np.ndarray
    m: np.ndarray
    vartheta: float = 0.0


@dataclass
class AdjointFields:
    q: np.ndarray          # (2, n2)
    pi: np.ndarray         # (n1,)
    theta: float = 0.0     # multiplier row, equals vartheta


def effective_direction(mesh: TriMesh, phi, state: StateFields,
                        objective: Objective, material: Material) -> np.ndarray:
    """Force direction whose linearization equals that of the force term."""
    if objective.kind == "drag":
        return np.asarray(objective.drag, dtype=float)
    if objective.kind == "none":
        return np.zeros(2)
    fd = eval_force_volume(mesh, phi, state, objective.drag, material)
    if fd == 0.0:
        raise DegenerateRatioError("drag vanishes; ratio undefined")
    fl = eval_force_volume(mesh, phi, state, objective.lift, material)
    # d(-FL/FD) = -dFL/FD + FL dFD / FD^2, and F is linear in a
    return (-np.asarray(objective.lift) / fd
            + fl / fd ** 2 * np.asarray(objective.drag))


def linearize_functional(mesh: TriMesh, objective, state: StateFields, phi,
                         material: Material) -> FunctionalLinearization:
    """D-terms of the force functional for an objective or a direction."""
    fs = get_space(mesh)
    if isinstance(objective, Objective):
        a = effective_direction(mesh, phi, state, objective, material)
    else:
        a = np.asarray(getattr(objective, "a", objective), dtype=float)
    gphi = np.broadcast_to(fs.grad_p1(phi)[:, None, :], fs.xq.shape)
    mu = state.mu
    D2 = mu * (gphi[..., :, None] * a[None, None, None, :]
               + a[None, None, :, None] * gphi[..., None, :])
    D3 = -gphi @ a
    D4 = stress_q(mesh, state) @ a
    m = material.modulation(fs.eval_p1(phi))[0]
    lin = FunctionalLinearization(D2, D3, D4, a, m)
    lin.vartheta = compute_vartheta(lin, mesh)
    return lin


def compute_vartheta(lin: FunctionalLinearization, mesh: TriMesh, phi=None,
                     choice=None) -> float:
    """Mean value of ``M(phi) D3h`` over the domain."""
    fs = get_space(mesh)
    return float(np.sum(lin.m * lin.D3h * fs.wdet)) / mesh.total_area


def adjoint_rhs(system: FlowSystem, state: StateFields,
                lin: FunctionalLinearization, porous: bool = True) -> np.ndarray:
    fs = system.space
    wd = fs.wdet
    rhs = np.zeros(system.size)
    n2 = system.n2
    # int M D2h : grad v, component c of v tested against row c of D2h
    md2 = lin.m[..., None, None] * lin.D2h
    for c in range(2):
        rhs[c * n2:(c + 1) * n2] = fs.vector_p2(
            np.einsum("mq,mqe,mqke->mk", wd, md2[..., c, :], fs.dphi2))
    if porous:
        rhs[:2 * n2] += system.A0_alpha @ state.u.ravel()
    rhs[2 * n2:2 * n2 + system.n1] = fs.load_p1(lin.m * lin.D3h)
    return rhs


def solve_adjoint(mesh: TriMesh, phi, state: StateFields,
                  lin: FunctionalLinearization, material: Material, mu=None,
                  f=None, g: InflowProfile | None = None,
                  porous: bool = True, system: FlowSystem | None = None) -> AdjointFields:
    """Solve the transposed state Newton system.

    The right side is ``int alpha u.v + int M D2h : grad v`` in the
    velocity rows and ``int M D3h eta`` in the pressure rows.  The
    multiplier row then returns ``theta = vartheta`` and
    ``div q = -M D3h + vartheta`` holds in the discrete sense.
    """
    mu = state.mu if mu is None else mu
    if system is None:
        system = FlowSystem(mesh, phi, material, mu, f, g)
    K = system.jacobian(state.u)
    rhs = adjoint_rhs(system, state, lin, porous)
    Kf = K[system.free][:, system.free].T
    x = np.zeros(system.size)
    x[system.free] = fem.solve_sparse(Kf.tocsr(), tol=1e-8, rhs=rhs[system.free])
    q, pi, theta = system.split(x)
    return AdjointFields(q.copy(), pi.copy(), float(theta))


def reduced_gradient(mesh: TriMesh, phi, state: StateFields,
                     adjoint: AdjointFields, lin: FunctionalLinearization,
                     objective: Objective, material: Material) -> np.ndarray:
    """Nodal vector ``g`` with ``Dj(phi)[zeta] = g . zeta`` for P1 zeta."""
    fs = get_space(mesh)
    phq = fs.eval_p1(phi)
    _, dalpha = material.alpha(phq)
    uq = fs.eval_vec(state.u)
    qq = fs.eval_vec(adjoint.q)
    dens = -dalpha * np.einsum("mqe,mqe->mq", uq, qq)
    if objective.porous:
        dens = dens + 0.5 * dalpha * np.einsum("mqe,mqe->mq", uq, uq)
    w = objective.gl_weight(material)
    grad = np.zeros(mesh.n_vertices)
    if w:
        fam = psi_family(phq, material.potential)
        dens = dens + w * (fam[3] + fam[4]) / material.eps
        K = fem.assemble(fs, "stiffness")
        grad += w * material.eps * (K @ phi)
    if objective.kind != "none":
        _, dm = material.modulation(phq)
        gphi = fs.grad_p1(phi)
        dens = dens + dm * np.einsum("me,mqe->mq", gphi, lin.D4h)
        grad += fs.load_p1_grad(lin.m[..., None] * lin.D4h)
    grad += fs.load_p1(dens)
    return grad
