import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfopt.mesh import (MeshError, TriMesh, _with_boundary, audit_conformity, dorfler_mark,
                        generate_rect_mesh, jump_indicator, p1_gradients, prolong_p1, refine,
                        write_vtk)


def signed_areas(mesh):
    p = mesh.vertices[mesh.triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def edge_incidence_ok(mesh):
    tri = mesh.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    n_boundary = np.sum(counts == 1)
    return counts.max() <= 2 and n_boundary == len(mesh.boundary_edges)


def two_triangle_square():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return _with_boundary(v, t, np.zeros(2, dtype=np.int64), (0.0, 0.0, 1.0, 1.0))


@pytest.mark.parametrize("w,h,th", [(1, 1, 0.5), (1.7, 0.4, 0.05), (1, 1, 2.0), (0.3, 0.7, 0.11)])
def test_rect_mesh_basic(w, h, th):
    m = generate_rect_mesh(w, h, th)
    assert m.n_triangles >= 2
    assert np.all(signed_areas(m) > 0)
    assert abs(m.total_area - w * h) <= 1e-12 * w * h
    assert edge_incidence_ok(m)


def test_rect_mesh_examples():
    assert generate_rect_mesh(1, 1, 0.5).n_triangles >= 8
    assert abs(generate_rect_mesh(1.7, 0.4, 0.05).total_area - 0.68) <= 1e-12


def test_rect_mesh_rejects_bad_input():
    with pytest.raises((MeshError, ValueError)):
        generate_rect_mesh(-1, 1, 0.1)
    with pytest.raises((MeshError, ValueError)):
        generate_rect_mesh(1, 1, 0)


def test_boundary_markers_cover_boundary():
    m = generate_rect_mesh(1.7, 0.4, 0.1)
    assert len(m.boundary_markers) == len(m.boundary_edges)
    perim = np.linalg.norm(m.vertices[m.boundary_edges[:, 0]] - m.vertices[m.boundary_edges[:, 1]],
                           axis=1).sum()
    assert abs(perim - 2 * (1.7 + 0.4)) < 1e-12


def test_jump_indicator_linear_and_constant():
    m = generate_rect_mesh(1, 1, 0.2)
    x, y = m.vertices.T
    assert np.allclose(jump_indicator(m, 3 * x - 2 * y + 1), 0, atol=1e-12)
    assert np.allclose(jump_indicator(m, np.full(m.n_vertices, 4.0)), 0)


def test_jump_indicator_tent_by_hand():
    m = two_triangle_square()
    f = np.array([0.0, 1.0, 0.0, 0.0])
    # grads (1,-1) and 0, diagonal of length sqrt2 with unit normal (1,-1)/sqrt2:
    # jump = sqrt2, eta^2 = sqrt2 * 2
    eta = jump_indicator(m, f)
    assert np.allclose(eta, np.sqrt(2 * np.sqrt(2)), rtol=1e-14)


def test_dorfler_examples():
    assert list(dorfler_mark(np.ones(7), 1.0)) == list(range(7))
    assert list(dorfler_mark(np.array([3.0, 0, 0, 0]), 0.5)) == [0]
    assert list(dorfler_mark(np.sqrt([4.0, 3, 2, 1]), 0.6)) == [0, 1]
    with pytest.raises(ValueError):
        dorfler_mark(np.ones(3), 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40),
       st.floats(0.01, 1.0))
def test_dorfler_bulk_criterion(eta, frac):
    eta = np.asarray(eta)
    marked = dorfler_mark(eta, frac)
    total = np.sum(eta ** 2)
    if total == 0:
        assert len(marked) == 0
        return
    s = np.sum(eta[marked] ** 2)
    assert s >= frac * total * (1 - 1e-12)
    # minimality: dropping the smallest marked one breaks the criterion
    smallest = np.min(eta[marked] ** 2)
    assert s - smallest < frac * total * (1 + 1e-12)


def test_refine_empty_is_identity():
    m = generate_rect_mesh(1, 1, 0.25)
    r = refine(m, [])
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)


def test_refine_all_and_one():
    m = generate_rect_mesh(1, 1, 0.25)
    r = refine(m, np.arange(m.n_triangles))
    assert r.n_triangles >= 2 * m.n_triangles
    assert abs(r.total_area - 1.0) <= 1e-12
    assert np.all(signed_areas(r) > 0)
    # one interior triangle
    c = m.vertices[m.triangles].mean(axis=1)
    k = int(np.argmin(np.linalg.norm(c - 0.5, axis=1)))
    r1 = refine(m, [k])
    assert audit_conformity(r1) and edge_incidence_ok(r1)
    assert abs(r1.total_area - 1.0) <= 1e-12


def test_audit_detects_hanging_node():
    # square split into two triangles, plus one triangle split on one side only
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    t = np.array([[0, 1, 2], [0, 4, 3], [4, 2, 3]])
    m = _with_boundary(v, t, np.zeros(3, dtype=np.int64), (0, 0, 1, 1))
    assert not audit_conformity(m)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_refine_preserves_area_and_prolongs_linear(seed, a, b, c):
    rng = np.random.default_rng(seed)
    m = generate_rect_mesh(1.7, 0.4, 0.2)
    for _ in range(3):
        marked = rng.choice(m.n_triangles, size=max(1, m.n_triangles // 5), replace=False)
        fine = refine(m, marked)
        assert abs(fine.total_area - 0.68) <= 1e-12 * 0.68
        assert np.all(signed_areas(fine) > 0)
        assert edge_incidence_ok(fine)
        f = a * m.vertices[:, 0] + b * m.vertices[:, 1] + c
        g = prolong_p1(fine, f)
        exact = a * fine.vertices[:, 0] + b * fine.vertices[:, 1] + c
        assert np.max(np.abs(g - exact)) <= 1e-13 * (1 + abs(a) + abs(b) + abs(c))
        m = fine
    assert audit_conformity(m)


def test_p1_gradients_linear():
    m = generate_rect_mesh(1, 1, 0.3)
    g = p1_gradients(m, 2 * m.vertices[:, 0] - 5 * m.vertices[:, 1])
    assert np.allclose(g, [2, -5], atol=1e-12)


def test_write_vtk_header(tmp_path):
    m = generate_rect_mesh(1, 1, 0.5)
    p = tmp_path / "m.vtk"
    write_vtk(p, m, {"phi": np.zeros(m.n_vertices)})
    text = p.read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 4.2"
    assert "ASCII" in text and "DATASET UNSTRUCTURED_GRID" in text
