"""P1/P2 finite elements on triangles: quadrature, dof maps, assembly, solves."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh


class FormError(ValueError):
    pass


class SolverError(RuntimeError):
    """Linear solve failed; ``residual`` holds the achieved residual norm."""

    def __init__(self, message, residual=np.inf):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points (nq, 3) and weights on the reference triangle.

    Weights sum to the reference area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _orbit(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def quadrature(degree: int = 4) -> QuadratureRule:
    """Symmetric Gauss rules on the reference triangle (Strang-Fix/Dunavant)."""
    if degree <= 1:
        pts = [(1 / 3, 1 / 3, 1 / 3)]
        w = [1.0]
        deg = 1
    elif degree == 2:
        pts = _orbit(1 / 6)
        w = [1 / 3] * 3
        deg = 2
    elif degree <= 4:
        pts = _orbit(0.44594849091596488632) + _orbit(0.09157621350977074346)
        w = [0.22338158967801146570] * 3 + [0.10995174365532186764] * 3
        deg = 4
    elif degree == 5:
        pts = ([(1 / 3, 1 / 3, 1 / 3)] + _orbit(0.47014206410511508977)
               + _orbit(0.10128650732345633880))
        w = ([0.225] + [0.13239415278850618074] * 3
             + [0.12593918054482715260] * 3)
        deg = 5
    else:
        raise FormError(f"no quadrature rule of degree {degree}")
    return QuadratureRule(np.array(pts), 0.5 * np.array(w), deg)


# ------------------------------------------------------------- basis values

def p1_basis(lam):
    return np.asarray(lam, dtype=float).copy()


def p2_basis(lam):
    l0, l1, l2 = np.asarray(lam, dtype=float).T
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=-1)


_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_ref_gradients(lam):
    """Gradients w.r.t. reference coordinates, shape (nq, 6, 2)."""
    lam = np.atleast_2d(lam)
    l0, l1, l2 = lam.T
    d0, d1, d2 = _DL
    g = np.empty((len(lam), 6, 2))
    g[:, 0] = (4 * l0 - 1)[:, None] * d0
    g[:, 1] = (4 * l1 - 1)[:, None] * d1
    g[:, 2] = (4 * l2 - 1)[:, None] * d2
    g[:, 3] = 4 * (l2[:, None] * d1 + l1[:, None] * d2)
    g[:, 4] = 4 * (l0[:, None] * d2 + l2[:, None] * d0)
    g[:, 5] = 4 * (l1[:, None] * d0 + l0[:, None] * d1)
    return g


# ------------------------------------------------------------------ dofmaps

@dataclass(frozen=True)
class DofMap:
    """Local-to-global table for one element kind.

    ``kind`` is ``"P1"``, ``"P2"`` or ``"P2vec"``.  Vector P2 dofs are stored
    blocked: component ``c`` of scalar dof ``i`` is ``c * n_scalar + i``.
    """

    kind: str
    n_dofs: int
    cells: np.ndarray

    @property
    def n_scalar(self) -> int:
        return self.n_dofs // 2 if self.kind == "P2vec" else self.n_dofs


class FESpace:
    """Geometry and basis data on one mesh, shared by every assembly."""

    def __init__(self, mesh: TriMesh, degree: int = 4):
        self.mesh = mesh
        self.quad = quadrature(degree)
        nv = mesh.n_vertices
        self.p1 = DofMap("P1", nv, mesh.triangles)
        cells2 = np.hstack([mesh.triangles, nv + mesh.tri_edges])
        n2 = nv + len(mesh.edges)
        self.p2 = DofMap("P2", n2, cells2)
        self.p2vec = DofMap("P2vec", 2 * n2, np.hstack([cells2, n2 + cells2]))
        self.n1, self.n2 = nv, n2

        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        self.inv_jac = inv / self.det[:, None, None]
        self.area = 0.5 * self.det

        lam = self.quad.points
        self.phi1 = p1_basis(lam)                      # (nq, 3)
        self.phi2 = p2_basis(lam)                      # (nq, 6)
        # dN/dx = dN/dxi @ inv_jac
        self.dphi1 = np.einsum("kd,mde->mke", _DL, self.inv_jac)  # (M,3,2)
        ref2 = p2_ref_gradients(lam)                   # (nq,6,2)
        self.dphi2 = np.einsum("qkd,mde->mqke", ref2, self.inv_jac)
        self.wdet = self.quad.weights[None, :] * self.det[:, None]  # (M,nq)
        self.xq = np.einsum("qk,mkd->mqd", self.phi1, p)           # (M,nq,2)

    # dof coordinates / boundary dofs
    @property
    def p2_coords(self) -> np.ndarray:
        m = self.mesh
        return np.vstack([m.vertices, m.vertices[m.edges].mean(axis=1)])

    def p2_boundary_dofs(self, markers=None) -> np.ndarray:
        m = self.mesh
        sel = np.ones(len(m.boundary_edges), dtype=bool)
        if markers is not None:
            sel = np.isin(m.boundary_markers, list(markers))
        bedges = m.boundary_edges[sel]
        verts = np.unique(bedges)
        # edge ids of boundary edges
        lookup = {tuple(e): k for k, e in enumerate(m.edges)}
        eids = np.array([lookup[tuple(e)] for e in bedges], dtype=np.int64)
        return np.unique(np.concatenate([verts, m.n_vertices + eids]))

    # evaluation at quadrature points
    def eval_p1(self, f):
        return f[self.mesh.triangles] @ self.phi1.T            # (M,nq)

    def grad_p1(self, f):
        return np.einsum("mk,mke->me", f[self.mesh.triangles], self.dphi1)

    def eval_p2(self, f):
        return f[self.p2.cells] @ self.phi2.T                  # (M,nq)

    def grad_p2(self, f):
        return np.einsum("mk,mqke->mqe", f[self.p2.cells], self.dphi2)

    def eval_vec(self, u):
        """u of shape (2, n2) -> values (M, nq, 2)."""
        return np.stack([self.eval_p2(u[0]), self.eval_p2(u[1])], axis=-1)

    def grad_vec(self, u):
        """Gradient tensor G[..., a, b] = d u_a / d x_b, shape (M, nq, 2, 2)."""
        return np.stack([self.grad_p2(u[0]), self.grad_p2(u[1])], axis=-2)

    # low level assembly helpers
    def _matrix(self, rows_cells, cols_cells, local, shape):
        r = np.broadcast_to(rows_cells[:, :, None], local.shape)
        c = np.broadcast_to(cols_cells[:, None, :], local.shape)
        mat = sp.coo_matrix((local.ravel(), (r.ravel(), c.ravel())),
                            shape=shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    def vector_p1(self, local):
        return np.bincount(self.mesh.triangles.ravel(), local.ravel(),
                           minlength=self.n1)

    def vector_p2(self, local):
        return np.bincount(self.p2.cells.ravel(), local.ravel(),
                           minlength=self.n2)

    def load_p1(self, values_q):
        """Vector ``int g N_i`` for P1 test functions, g given at quad points."""
        return self.vector_p1(np.einsum("mq,qk->mk", values_q * self.wdet,
                                        self.phi1))

    def load_p1_grad(self, vec_q):
        """Vector ``int G . grad N_i`` for a vector field G at quad points."""
        return self.vector_p1(np.einsum("mqe,mke->mk",
                                        vec_q * self.wdet[..., None],
                                        self.dphi1))

    def load_p2(self, values_q):
        return self.vector_p2(np.einsum("mq,qk->mk", values_q * self.wdet,
                                        self.phi2))


_SPACES: "weakref.WeakKeyDictionary[TriMesh, FESpace]" = weakref.WeakKeyDictionary()


def get_space(mesh: TriMesh) -> FESpace:
    """Cached :class:`FESpace` for ``mesh``."""
    sp_ = _SPACES.get(mesh)
    if sp_ is None:
        sp_ = FESpace(mesh)
        _SPACES[mesh] = sp_
    return sp_


# --------------------------------------------------------------- form catalog

FORMS = ("mass", "stiffness", "weighted_mass", "divergence", "sym_stiffness",
         "convection", "convection_grad", "vector_weighted_mass")


def _coef_q(space, coef):
    """Coefficient at quadrature points from a scalar, callable or nodal field."""
    m = space.mesh
    if coef is None:
        return np.ones_like(space.wdet)
    if callable(coef):
        return np.asarray(coef(space.xq[..., 0], space.xq[..., 1]), dtype=float)
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        return np.full_like(space.wdet, float(coef))
    if coef.shape == space.wdet.shape:
        return coef
    if coef.shape == (m.n_vertices,):
        return space.eval_p1(coef)
    if coef.shape == (space.n2,):
        return space.eval_p2(coef)
    raise FormError("coefficient does not live on this mesh")


def _block2(mat):
    """Block-diagonal 2-vector operator from a scalar P2 operator."""
    return sp.block_diag([mat, mat], format="csr")


def assemble(space_or_mesh, form: str, space: str = "P1", coefficient=None,
             velocity=None) -> sp.csr_matrix:
    """Assemble one form of the fixed catalog.

    Parameters
    ----------
    form : str
        ``mass``, ``stiffness``, ``weighted_mass`` (scalar spaces ``P1`` or
        ``P2``); ``vector_weighted_mass``, ``sym_stiffness``,
        ``convection`` ((u.grad)v.w with v the trial function) and
        ``convection_grad`` ((v.grad)u.w) on ``P2vec``; ``divergence``
        (rows P1 test q, columns P2vec trial v, entries ``int q div v``).
    coefficient : scalar, callable(x, y), nodal field or quad-point array
        weight for the ``weighted_mass`` forms.
    velocity : (2, n2) array
        transport field for the convection forms.
    """
    fs = space_or_mesh if isinstance(space_or_mesh, FESpace) else get_space(space_or_mesh)
    if form not in FORMS:
        raise FormError(f"unknown form {form!r}")
    wd = fs.wdet
    if form in ("mass", "stiffness", "weighted_mass"):
        if space == "P1":
            cells, n, phi = fs.p1.cells, fs.n1, fs.phi1
        elif space == "P2":
            cells, n, phi = fs.p2.cells, fs.n2, fs.phi2
        else:
            raise FormError(f"{form} needs a scalar space")
        if form == "stiffness":
            if space == "P1":
                local = np.einsum("mke,mle->mkl", fs.dphi1, fs.dphi1) * fs.area[:, None, None]
            else:
                local = np.einsum("mq,mqke,mqle->mkl", wd, fs.dphi2, fs.dphi2)
        else:
            c = wd if form == "mass" else wd * _coef_q(fs, coefficient)
            local = np.einsum("mq,qk,ql->mkl", c, phi, phi)
        return fs._matrix(cells, cells, local, (n, n))
    if form == "vector_weighted_mass":
        c = wd * _coef_q(fs, coefficient)
        local = np.einsum("mq,qk,ql->mkl", c, fs.phi2, fs.phi2)
        return _block2(fs._matrix(fs.p2.cells, fs.p2.cells, local, (fs.n2, fs.n2)))
    if form == "sym_stiffness":
        # (grad u + grad u^T) : grad v ; block (a, c) = delta_ac K + G_ac,
        # G_ac[i, j] = int d_c N_i d_a N_j
        K = np.einsum("mq,mqke,mqle->mkl", wd, fs.dphi2, fs.dphi2)
        blocks = [[None, None], [None, None]]
        for a in range(2):
            for c in range(2):
                G = np.einsum("mq,mqk,mql->mkl", wd, fs.dphi2[..., c],
                              fs.dphi2[..., a])
                local = G + (K if a == c else 0.0)
                blocks[a][c] = fs._matrix(fs.p2.cells, fs.p2.cells, local,
                                          (fs.n2, fs.n2))
        return sp.bmat(blocks, format="csr")
    if form == "divergence":
        blocks = []
        for c in range(2):
            local = np.einsum("mq,qk,mql->mkl", wd, fs.phi1, fs.dphi2[..., c])
            blocks.append(fs._matrix(fs.p1.cells, fs.p2.cells, local,
                                     (fs.n1, fs.n2)))
        return sp.hstack(blocks, format="csr")
    if velocity is None:
        raise FormError(f"{form} needs a velocity field")
    uq = fs.eval_vec(velocity)
    if form == "convection":
        # int (u . grad N_j) N_i, same for both components
        adv = np.einsum("mqe,mqle->mql", uq, fs.dphi2)
        local = np.einsum("mq,qk,mql->mkl", wd, fs.phi2, adv)
        return _block2(fs._matrix(fs.p2.cells, fs.p2.cells, local, (fs.n2, fs.n2)))
    # convection_grad: row (a, i), col (c, j): int N_j d_c u_a N_i
    G = fs.grad_vec(velocity)
    blocks = [[None, None], [None, None]]
    for a in range(2):
        for c in range(2):
            local = np.einsum("mq,mq,qk,ql->mkl", wd, G[..., a, c], fs.phi2, fs.phi2)
            blocks[a][c] = fs._matrix(fs.p2.cells, fs.p2.cells, local, (fs.n2, fs.n2))
    return sp.bmat(blocks, format="csr")


# --------------------------------------------------------- scalar functionals

def trilinear_b(mesh: TriMesh, u, v, w) -> float:
    """``int (u . grad) v . w dx`` for P2 vector fields of shape (2, n2)."""
    fs = get_space(mesh)
    for f in (u, v, w):
        if np.shape(f) != (2, fs.n2):
            raise FormError("field does not live on this mesh")
    uq = fs.eval_vec(u)
    G = fs.grad_vec(v)
    wq = fs.eval_vec(w)
    integrand = np.einsum("mqb,mqab,mqa->mq", uq, G, wq)
    return float(np.sum(integrand * fs.wdet))


def grad_norm(mesh: TriMesh, u) -> float:
    """``||grad u||_{L^2}`` of a P2 vector field."""
    fs = get_space(mesh)
    G = fs.grad_vec(u)
    return float(np.sqrt(np.sum(np.einsum("mqab,mqab->mq", G, G) * fs.wdet)))


def k_omega(domain_measure: float, d: int) -> float:
    """Constant of the trilinear continuity estimate."""
    if domain_measure <= 0:
        raise ValueError("domain measure must be positive")
    if d == 2:
        return 0.5 * domain_measure ** 0.5
    if d == 3:
        return 2.0 * np.sqrt(2.0) / 3.0 * domain_measure ** (1.0 / 6.0)
    raise ValueError("dimension must be 2 or 3")


def integrate(mesh: TriMesh, integrand, degree: int = 4) -> float:
    """Quadrature of ``integrand(x, y, space)`` or of a P1/P2 nodal field.

    A callable receives quadrature coordinates of shape (M, nq) and the
    :class:`FESpace`, so it may combine fields and gradients from it.
    """
    fs = get_space(mesh) if degree == 4 else FESpace(mesh, degree)
    if callable(integrand):
        vals = integrand(fs.xq[..., 0], fs.xq[..., 1], fs)
    else:
        vals = _coef_q(fs, integrand)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), fs.wdet.shape)
    return float(np.sum(vals * fs.wdet))


# -------------------------------------------------------------------- solves

@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray


def solve_sparse(system, tol: float = 1e-10, rhs=None) -> np.ndarray:
    """Sparse direct solve with a residual check.

    Accepts a :class:`SparseSystem` or a matrix plus ``rhs``.
    """
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    A = sp.csc_matrix(A)
    res = np.inf
    # relaxed threshold pivoting is much cheaper on saddle systems; strict
    # partial pivoting is the fallback when the residual check fails
    for opts in (dict(diag_pivot_thresh=0.1, options=dict(SymmetricMode=True)), {}):
        try:
            x = spla.splu(A, permc_spec="COLAMD", **opts).solve(b)
        except RuntimeError as exc:
            err = exc
            continue
        res = float(np.linalg.norm(A @ x - b))
        if np.all(np.isfinite(x)) and res <= tol * bnorm:
            return x
        err = None
    if bnorm == 0.0 and res == 0.0:
        return x
    if err is not None and not np.isfinite(res):
        raise SolverError(f"factorization failed: {err}", bnorm) from err
    raise SolverError("linear solve did not reach tolerance", res)
