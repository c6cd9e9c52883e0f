import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from pfopt import fem
from pfopt.fem import FormError, SolverError, SparseSystem, get_space, quadrature

from conftest import unit_square


def monomial_integral(a: int, b: int) -> float:
    # int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 4, 5])
def test_quadrature_exactness(degree):
    q = quadrature(degree)
    bary = np.asarray(q.points)
    x, y = bary[:, 1], bary[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = np.sum(np.asarray(q.weights) * x ** a * y ** b)
            exact = monomial_integral(a, b)
            assert abs(approx - exact) <= 1e-13 * exact


def test_mass_and_stiffness_properties():
    m = unit_square(0.125)
    M = fem.assemble(m, "mass", "P1")
    K = fem.assemble(m, "stiffness", "P1")
    lumped = np.zeros(m.n_vertices)
    np.add.at(lumped, m.triangles.ravel(), np.repeat(m.areas / 3.0, 3))
    assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), lumped, rtol=1e-13)
    assert abs(M.sum() - 1.0) < 1e-13
    assert np.max(np.abs(K @ np.ones(m.n_vertices))) < 1e-12
    W = fem.assemble(m, "weighted_mass", "P1", coefficient=2.0)
    assert abs(W - 2 * M).max() < 1e-14


@pytest.mark.parametrize("form,space", [("mass", "P1"), ("stiffness", "P1"), ("mass", "P2"),
                                        ("stiffness", "P2"), ("sym_stiffness", "P2vec"),
                                        ("vector_weighted_mass", "P2vec")])
def test_symmetric_forms_are_symmetric(form, space):
    m = unit_square(0.2)
    coef = (lambda x, y: 1 + x * y) if "weighted" in form else None
    A = fem.assemble(m, form, space, coefficient=coef)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_p2_mass_total():
    m = unit_square(0.25)
    M2 = fem.assemble(m, "mass", "P2")
    assert abs(M2.sum() - 1.0) < 1e-13


def test_unknown_form():
    with pytest.raises(FormError):
        fem.assemble(unit_square(0.5), "laplace_beltrami")


def test_integrate_examples():
    m = unit_square(0.25)
    assert abs(fem.integrate(m, lambda x, y, fs: np.ones_like(x)) - 1.0) < 1e-13
    assert abs(fem.integrate(m, lambda x, y, fs: x) - 0.5) < 1e-13
    phi = m.vertices[:, 0].copy()
    val = fem.integrate(m, lambda x, y, fs: np.sum(fs.grad_p1(phi) ** 2, axis=-1)[:, None])
    assert abs(val - 1.0) < 1e-13


def test_k_omega():
    assert fem.k_omega(4, 2) == pytest.approx(1.0, abs=1e-15)
    assert fem.k_omega(1, 3) == pytest.approx(2 * math.sqrt(2) / 3, abs=1e-12)
    assert fem.k_omega(0.68, 2) == pytest.approx(0.412311, abs=1e-6)
    with pytest.raises(ValueError):
        fem.k_omega(-1, 2)


def test_solve_sparse_examples():
    r = np.array([1.0, -2.0, 3.0])
    assert np.allclose(fem.solve_sparse(sp.identity(3, format="csr"), rhs=r), r)
    x = fem.solve_sparse(SparseSystem(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)
    with pytest.raises(SolverError):
        fem.solve_sparse(sp.csr_matrix((2, 2)), rhs=np.ones(2))
    with pytest.raises(SolverError):
        fem.solve_sparse(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), rhs=np.array([1.0, 0.0]))


# ------------------------------------------------------------- trilinear form

def _bubble_field(fs, rng, n_modes=3):
    """Random smooth P2 vector field vanishing on the boundary of (0,1)^2."""
    x, y = fs.p2_coords.T
    bub = x * (1 - x) * y * (1 - y)
    out = np.zeros((2, fs.n2))
    for c in range(2):
        for _ in range(n_modes):
            k = rng.uniform(0, 6, 2)
            out[c] += rng.normal() * bub * np.cos(k[0] * x + k[1] * y + rng.uniform(0, 6))
    return out


def _any_field(fs, rng):
    x, y = fs.p2_coords.T
    out = np.zeros((2, fs.n2))
    for c in range(2):
        k = rng.uniform(0, 6, 2)
        out[c] = rng.normal() * np.sin(k[0] * x + k[1] * y) + rng.normal() * x * y + rng.normal()
    return out


def test_trilinear_constant_v_is_zero(rng):
    fs = get_space(unit_square(0.2))
    u = _any_field(fs, rng)
    v = np.tile(np.array([[1.5], [-0.3]]), (1, fs.n2))
    assert abs(fem.trilinear_b(fs.mesh, u, v, _any_field(fs, rng))) < 1e-14


def test_trilinear_identities_constant_u(rng):
    mesh = unit_square(0.2)
    fs = get_space(mesh)
    u = np.tile(rng.normal(size=(2, 1)), (1, fs.n2))
    worst = 0.0
    for _ in range(50):
        v, w = _bubble_field(fs, rng), _bubble_field(fs, rng)
        scale = fem.grad_norm(mesh, v) * fem.grad_norm(mesh, w) * np.abs(u).max()
        worst = max(worst, abs(fem.trilinear_b(mesh, u, v, v)) / scale,
                    abs(fem.trilinear_b(mesh, u, v, w) + fem.trilinear_b(mesh, u, w, v)) / scale)
    assert worst <= 1e-12


def test_trilinear_continuity_bound(rng):
    mesh = unit_square(0.2)
    fs = get_space(mesh)
    K = fem.k_omega(mesh.total_area, 2)
    for _ in range(100):
        u, w = _bubble_field(fs, rng), _bubble_field(fs, rng)
        v = _any_field(fs, rng)
        lhs = abs(fem.trilinear_b(mesh, u, v, w))
        rhs = K * fem.grad_norm(mesh, u) * fem.grad_norm(mesh, v) * fem.grad_norm(mesh, w)
        assert lhs <= rhs


def test_trilinear_wrong_shape():
    mesh = unit_square(0.5)
    with pytest.raises(FormError):
        fem.trilinear_b(mesh, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_convection_matrix_matches_trilinear(seed):
    rng = np.random.default_rng(seed)
    mesh = unit_square(0.34)
    fs = get_space(mesh)
    u, v, w = _any_field(fs, rng), _any_field(fs, rng), _any_field(fs, rng)
    C = fem.assemble(fs, "convection", velocity=u)
    G = fem.assemble(fs, "convection_grad", velocity=u)
    b = fem.trilinear_b(mesh, u, v, w)
    assert w.ravel() @ (C @ v.ravel()) == pytest.approx(b, rel=1e-11, abs=1e-13)
    # (v.grad)u.w
    assert w.ravel() @ (G @ v.ravel()) == pytest.approx(fem.trilinear_b(mesh, v, u, w),
                                                        rel=1e-11, abs=1e-13)
