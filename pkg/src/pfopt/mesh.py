"""Conforming triangular meshes of rectangles with newest-vertex bisection.

Triangles are stored positively oriented with the *newest vertex* in local
position 0, so the refinement edge of triangle ``(a, b, c)`` is ``(b, c)``.
Refinement marks edges, closes the marking so that every triangle carrying a
marked edge also has its refinement edge marked, and then bisects.  The
result is conforming for any initial choice of refinement edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INFLOW = "inflow"
OUTFLOW = "outflow"
WALL = "wall"
OUTER = "outer"


class MeshError(ValueError):
    """Invalid mesh argument."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (N, 2) float array
    triangles : (M, 3) int array, positively oriented, newest vertex first
    boundary_edges : (K, 2) int array of vertex pairs (sorted)
    boundary_markers : (K,) array of marker names
    generation : (M,) int array of refinement levels
    parent : (M,) int array, parent triangle in the previous mesh (-1 if none)
    vertex_parents : (N_new, 2) int array; vertex ``N - N_new + i`` is the
        midpoint of previous-mesh vertices ``vertex_parents[i]``
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    generation: np.ndarray
    parent: np.ndarray | None = None
    vertex_parents: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def __repr__(self) -> str:
        return (f"TriMesh({self.n_vertices} vertices, {self.n_triangles} "
                f"triangles, max generation {int(self.generation.max())})")

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lens = [np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1)
                for i in range(3)]
        return np.max(lens, axis=0)

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    @cached_property
    def _edge_structure(self):
        t = self.triangles
        # local edge k is opposite local vertex k
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) sorted vertex pairs of all edges."""
        return self._edge_structure[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(M, 3) global edge index of the local edge opposite vertex k."""
        return self._edge_structure[1]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) adjacent triangles per edge, -1 where there is none."""
        n_e = len(self.edges)
        out = -np.ones((n_e, 2), dtype=np.int64)
        te = self.tri_edges.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(te, kind="stable")
        te, tri = te[order], tri[order]
        first = np.ones(len(te), dtype=bool)
        first[1:] = te[1:] != te[:-1]
        out[te[first], 0] = tri[first]
        out[te[~first], 1] = tri[~first]
        return out

    @property
    def boundary_map(self) -> dict:
        """Mapping ``(i, j) -> marker`` with ``i < j``."""
        return {(int(a), int(b)): str(m) for (a, b), m in
                zip(self.boundary_edges, self.boundary_markers)}

    def boundary_vertices(self, markers=None) -> np.ndarray:
        sel = np.ones(len(self.boundary_edges), dtype=bool)
        if markers is not None:
            sel = np.isin(self.boundary_markers, list(markers))
        return np.unique(self.boundary_edges[sel])

    @cached_property
    def bounding_box(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def check(self) -> None:
        """Raise ``MeshError`` if orientation or conformity is violated."""
        if np.any(self.signed_areas <= 0):
            raise MeshError("non-positive triangle area")
        et = self.edge_triangles
        single = et[:, 1] < 0
        bnd = {tuple(e) for e in self.edges[single]}
        listed = {tuple(e) for e in np.sort(self.boundary_edges, axis=1)}
        if bnd != listed:
            raise MeshError("boundary edge set does not match edge incidence")
        # a hanging node lies in the interior of some boundary-free edge
        counts = np.bincount(self.tri_edges.ravel(), minlength=len(self.edges))
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")


def _marker_for(mid: np.ndarray, box, tol: float) -> str:
    x0, y0, x1, y1 = box
    if abs(mid[0] - x0) < tol:
        return INFLOW
    if abs(mid[0] - x1) < tol:
        return OUTFLOW
    if abs(mid[1] - y0) < tol or abs(mid[1] - y1) < tol:
        return WALL
    return OUTER


def generate_rect_mesh(width: float, height: float, target_h: float) -> TriMesh:
    """Structured triangulation of ``(0, width) x (0, height)``.

    Each grid cell is split along a diagonal; diagonals in the upper half
    mirror those in the lower half so the mesh is symmetric about the
    horizontal midline.  The diagonal is the refinement edge of both halves.

    Examples
    --------
    >>> m = generate_rect_mesh(1.0, 1.0, 0.5)
    >>> m.n_triangles, round(m.total_area, 12)
    (8, 1.0)
    """
    if not (width > 0 and height > 0 and target_h > 0):
        raise MeshError("width, height and target_h must be positive")
    nx = max(1, math.ceil(width / target_h - 1e-12))
    ny = max(1, math.ceil(height / target_h - 1e-12))
    if ny > 1 and ny % 2:
        ny += 1
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if j < ny / 2:
                # diagonal a-c, newest vertex opposite the diagonal
                tris.append((b, c, a))
                tris.append((d, a, c))
            else:
                # diagonal b-d
                tris.append((a, b, d))
                tris.append((c, d, b))
    triangles = np.array(tris, dtype=np.int64)
    return _with_boundary(vertices, triangles, np.zeros(len(triangles), int),
                          box=(0.0, 0.0, width, height))


def _with_boundary(vertices, triangles, generation, box, parent=None,
                   vertex_parents=None, parent_markers=None) -> TriMesh:
    proto = TriMesh(vertices, triangles, np.zeros((0, 2), int),
                    np.array([], dtype=object), generation)
    edges = proto.edges
    single = proto.edge_triangles[:, 1] < 0
    bedges = edges[single]
    tol = 1e-9 * max(box[2] - box[0], box[3] - box[1])
    markers = []
    for e in bedges:
        m = None
        if parent_markers is not None:
            m = parent_markers(int(e[0]), int(e[1]))
        if m is None:
            m = _marker_for(vertices[e].mean(axis=0), box, tol)
        markers.append(m)
    kw = {}
    if vertex_parents is not None:
        kw["vertex_parents"] = vertex_parents
    return TriMesh(vertices, triangles, bedges, np.array(markers, dtype=object),
                   generation, parent=parent, **kw)


def refine(mesh: TriMesh, marked) -> TriMesh:
    """Newest-vertex bisection of the marked triangles plus conformity closure.

    Every marked triangle is bisected at least once.  The returned mesh
    records ``parent`` (per triangle) and ``vertex_parents`` (per new vertex)
    so that P1 fields can be prolonged with :func:`prolong_p1`.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise IndexError("marked triangle index out of range")
    if marked.size == 0:
        return mesh

    tri_edges = mesh.tri_edges
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[tri_edges[marked, 0]] = True
    while True:
        has = edge_marked[tri_edges].any(axis=1)
        need = has & ~edge_marked[tri_edges[:, 0]]
        if not need.any():
            break
        edge_marked[tri_edges[need, 0]] = True

    n_old = mesh.n_vertices
    marked_edges = np.flatnonzero(edge_marked)
    midpoint = -np.ones(len(mesh.edges), dtype=np.int64)
    midpoint[marked_edges] = n_old + np.arange(len(marked_edges))
    parents_pairs = mesh.edges[marked_edges]
    new_vertices = np.vstack([mesh.vertices,
                              mesh.vertices[parents_pairs].mean(axis=1)])

    t = mesh.triangles
    m0 = midpoint[tri_edges[:, 0]]
    m1 = midpoint[tri_edges[:, 1]]
    m2 = midpoint[tri_edges[:, 2]]
    out_tris, out_parent, out_gen = [], [], []
    gen = mesh.generation
    for k in range(mesh.n_triangles):
        a, b, c = t[k]
        if m0[k] < 0:
            out_tris.append((a, b, c))
            out_parent.append(k)
            out_gen.append(gen[k])
            continue
        left = [(m0[k], a, b)]
        right = [(m0[k], c, a)]
        # children's refinement edges are (a, b) and (c, a)
        if m2[k] >= 0:
            left = [(m2[k], m0[k], a), (m2[k], b, m0[k])]
        if m1[k] >= 0:
            right = [(m1[k], m0[k], c), (m1[k], a, m0[k])]
        for child, depth in ([(ch, len(left)) for ch in left]
                             + [(ch, len(right)) for ch in right]):
            out_tris.append(child)
            out_parent.append(k)
            out_gen.append(gen[k] + depth)

    old_map = mesh.boundary_map
    mid_parent = {int(n_old + i): (int(p[0]), int(p[1]))
                  for i, p in enumerate(parents_pairs)}

    def parent_marker(i, j):
        if i < n_old and j < n_old:
            return old_map.get((i, j))
        new = j if j >= n_old else i
        pa = mid_parent[new]
        return old_map.get(pa)

    return _with_boundary(new_vertices, np.array(out_tris, dtype=np.int64),
                          np.array(out_gen, dtype=np.int64), mesh.bounding_box,
                          parent=np.array(out_parent, dtype=np.int64),
                          vertex_parents=parents_pairs.copy(),
                          parent_markers=parent_marker)


def prolong_p1(fine: TriMesh, values: np.ndarray) -> np.ndarray:
    """Linear interpolation of a P1 field from the parent mesh onto ``fine``."""
    values = np.asarray(values, dtype=float)
    n_new = len(fine.vertex_parents)
    n_old = fine.n_vertices - n_new
    if values.shape[0] != n_old:
        raise MeshError("field does not live on the parent mesh")
    out = np.empty((fine.n_vertices,) + values.shape[1:])
    out[:n_old] = values
    out[n_old:] = 0.5 * (values[fine.vertex_parents[:, 0]]
                         + values[fine.vertex_parents[:, 1]])
    return out


def p1_gradients(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Constant gradient of a P1 field on every triangle, shape (M, 2)."""
    p = mesh.vertices[mesh.triangles]
    f = field[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    df1 = f[:, 1] - f[:, 0]
    df2 = f[:, 2] - f[:, 0]
    gx = (df1 * d2[:, 1] - df2 * d1[:, 1]) / det
    gy = (df2 * d1[:, 0] - df1 * d2[:, 0]) / det
    return np.column_stack([gx, gy])


def jump_indicator(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Per-triangle indicator from normal-derivative jumps of a P1 field.

    ``eta_T**2 = sum_e |e| [d_n field]_e**2`` over the interior edges of T.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise MeshError("field must hold one value per vertex")
    grads = p1_gradients(mesh, field)
    et = mesh.edge_triangles
    interior = et[:, 1] >= 0
    e = mesh.edges[interior]
    t1, t2 = et[interior, 0], et[interior, 1]
    vec = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.linalg.norm(vec, axis=1)
    normal = np.column_stack([vec[:, 1], -vec[:, 0]]) / length[:, None]
    jump = np.einsum("ij,ij->i", grads[t1] - grads[t2], normal)
    contrib = length * jump ** 2
    eta2 = np.bincount(t1, contrib, minlength=mesh.n_triangles)
    eta2 += np.bincount(t2, contrib, minlength=mesh.n_triangles)
    return np.sqrt(eta2)


def dorfler_mark(indicator, fraction: float) -> np.ndarray:
    """Minimal set M with ``sum_M eta^2 >= fraction * sum eta^2``.

    Greedy by descending indicator, ties broken by lower index.
    """
    eta = np.asarray(indicator, dtype=float)
    if eta.size == 0:
        raise ValueError("indicator is empty")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    order = np.argsort(-eta, kind="stable")
    cum = np.cumsum(eta[order] ** 2)
    total = cum[-1]
    if total <= 0.0:
        return np.zeros(0, dtype=np.int64)
    n = int(np.searchsorted(cum, fraction * total, side="left")) + 1
    return np.sort(order[:min(n, eta.size)])


def audit_conformity(mesh: TriMesh) -> bool:
    """Independent hanging-node audit: no vertex lies inside another edge."""
    v = mesh.vertices
    e = mesh.edges
    a, b = v[e[:, 0]], v[e[:, 1]]
    for k, p in enumerate(v):
        ab = b - a
        ap = p - a
        cross = ab[:, 0] * ap[:, 1] - ab[:, 1] * ap[:, 0]
        t = np.einsum("ij,ij->i", ap, ab) / np.einsum("ij,ij->i", ab, ab)
        scale = np.einsum("ij,ij->i", ab, ab)
        inside = (np.abs(cross) < 1e-12 * scale) & (t > 1e-9) & (t < 1 - 1e-9)
        if inside.any():
            return False
    return True


def write_vtk(path, mesh: TriMesh, point_data: dict | None = None,
              title: str = "pfopt") -> None:
    """Legacy ASCII VTK (4.2) unstructured grid with triangle cells.

    ``point_data`` maps names to arrays of shape (N,) (scalars) or (N, 2)
    (vectors, written with a zero third component).
    """
    lines = ["# vtk DataFile Version 4.2", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    m = mesh.n_triangles
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{x:.17g}" for x in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{x:.17g} {y:.17g} 0" for x, y in arr[:, :2]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
