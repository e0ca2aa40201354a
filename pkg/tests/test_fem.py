import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from potinv.analysis import fit_rate
from potinv.fem import (
    FeFunction, Potential, SolverFailure, SpdSolver, assemble_load, assemble_mass,
    assemble_stiffness, assemble_weighted_mass, backward_error, evaluate_p1, interpolate,
    l2_project, norm_h1, norm_l2, pcg, quadrature_rule, seminorm_h1, solve_spd, transfer,
)
from potinv.mesh import build_interval_mesh, build_mesh, build_unit_square_mesh

meshes = st.builds(lambda d, n: build_mesh(d, n), st.integers(1, 2), st.integers(2, 12))


def _gauss_weighted_mass_1d(mesh, q, points=10):
    """Dense oracle: 10-point Gauss-Legendre on each segment."""
    t, w = np.polynomial.legendre.leggauss(points)
    lam = (t + 1) / 2
    w = w / 2
    out = np.zeros((mesh.num_nodes, mesh.num_nodes))
    for e, (a, b) in enumerate(mesh.elements):
        h = mesh.element_measures[e]
        phi = np.stack([1 - lam, lam])
        qv = q[a] * phi[0] + q[b] * phi[1]
        loc = np.einsum("q,aq,bq->ab", w * qv * h, phi, phi)
        idx = [a, b]
        out[np.ix_(idx, idx)] += loc
    return out


def test_stiffness_1d_hand():
    A = assemble_stiffness(build_interval_mesh(2)).toarray()
    assert A[1, 1] == pytest.approx(4.0, abs=1e-13)
    assert A[1, 0] == pytest.approx(-2.0, abs=1e-13)
    assert A[1, 2] == pytest.approx(-2.0, abs=1e-13)


def test_stiffness_2d_hand():
    m = build_unit_square_mesh(2)
    A = assemble_stiffness(m).toarray()
    c = 4  # centre node (0.5, 0.5)
    assert A[c, c] == pytest.approx(4.0, abs=1e-13)
    # five-point stencil: axis neighbours -1, diagonal neighbours 0
    for k, x in enumerate(m.nodes):
        if k == c:
            continue
        d = np.abs(x - 0.5)
        expected = -1.0 if d.sum() == 0.5 else 0.0
        assert A[c, k] == pytest.approx(expected, abs=1e-13)


def test_mass_1d_hand():
    M = assemble_mass(build_interval_mesh(2)).toarray()
    assert M[1, 1] == pytest.approx(1 / 3, abs=1e-14)
    assert M[1, 0] == pytest.approx(1 / 12, abs=1e-14)


def test_mass_2d_hand():
    # element mass is |K|/12 * (1 + delta_ab)
    m = build_unit_square_mesh(2)
    M = assemble_mass(m).toarray()
    area = 1 / 8
    # centre node touches 6 triangles
    assert M[4, 4] == pytest.approx(6 * area / 6, abs=1e-14)


@given(meshes)
def test_matrix_structure(mesh):
    A, M = assemble_stiffness(mesh), assemble_mass(mesh)
    for mat in (A, M):
        assert isinstance(mat, sp.csr_matrix)
        assert mat.has_sorted_indices
        assert abs(mat - mat.T).max() <= 1e-12
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 0.0, atol=1e-11)
    assert M.sum() == pytest.approx(1.0, rel=1e-12)
    I = mesh.interior
    if I.size:
        assert np.linalg.eigvalsh(A[I][:, I].toarray()).min() > 0


@given(meshes, st.floats(0.0, 5.0))
def test_weighted_mass_constant(mesh, c):
    M = assemble_mass(mesh)
    Mq = assemble_weighted_mass(mesh, np.full(mesh.num_nodes, c))
    assert abs(Mq - c * M).max() <= 1e-14 * max(1.0, c)


@given(meshes, st.data())
def test_weighted_mass_linear(mesh, data):
    q1 = data.draw(arrays(float, mesh.num_nodes, elements=st.floats(0, 2)))
    q2 = data.draw(arrays(float, mesh.num_nodes, elements=st.floats(0, 2)))
    lhs = assemble_weighted_mass(mesh, q1 + q2)
    rhs = assemble_weighted_mass(mesh, q1) + assemble_weighted_mass(mesh, q2)
    assert abs(lhs - rhs).max() <= 1e-13


def test_weighted_mass_vs_gauss():
    m = build_interval_mesh(4)
    q = np.random.default_rng(1).uniform(0.4, 2.0, m.num_nodes)
    oracle = _gauss_weighted_mass_1d(m, q)
    np.testing.assert_allclose(assemble_weighted_mass(m, q).toarray(), oracle, rtol=0, atol=1e-13)


def test_weighted_mass_2d_vs_quadrature():
    # degree-4 rule integrates the cubic P1 triple product exactly
    m = build_unit_square_mesh(3)
    q = np.random.default_rng(2).uniform(0.4, 2.0, m.num_nodes)
    bary, w = quadrature_rule(2, 4)
    out = np.zeros((m.num_nodes, m.num_nodes))
    for e, el in enumerate(m.elements):
        qv = bary @ q[el]
        out[np.ix_(el, el)] += np.einsum("q,qa,qb->ab", w * qv * m.element_measures[e], bary, bary)
    np.testing.assert_allclose(assemble_weighted_mass(m, q).toarray(), out, rtol=0, atol=1e-13)


def test_weighted_mass_mesh_mismatch():
    m = build_interval_mesh(4)
    q = Potential.constant(build_interval_mesh(4), 1.0)
    with pytest.raises(ValueError):
        assemble_weighted_mass(m, q)
    with pytest.raises(ValueError):
        assemble_weighted_mass(m, np.ones(3))


@pytest.mark.parametrize("dim", [1, 2])
def test_quadrature_exact_for_cubics(dim):
    rng = np.random.default_rng(0)
    for degree in (3, 4) if dim == 2 else (3,):
        bary, w = quadrature_rule(dim, degree)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        # monomials in barycentrics against the simplex moment formula
        from math import factorial
        for _ in range(10):
            p = rng.integers(0, degree + 1, size=dim + 1)
            if p.sum() > degree:
                continue
            exact = factorial(dim) * np.prod([factorial(k) for k in p]) / factorial(dim + p.sum())
            assert np.sum(w * np.prod(bary**p, axis=1)) == pytest.approx(exact, abs=1e-14)


def test_load_examples():
    for dim in (1, 2):
        m = build_mesh(dim, 4)
        assert assemble_load(m, 1.0).sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(assemble_load(m, 0.0), 0.0)
    assert assemble_load(build_interval_mesh(4), lambda x: x).sum() == pytest.approx(0.5, abs=1e-12)


def test_load_exact_for_quadratic_times_p1():
    # f = x^2: F_i = int x^2 phi_i is integrated exactly by the cubic rule
    m = build_interval_mesh(5)
    F = assemble_load(m, lambda x: x**2)
    x, h = m.nodes[:, 0], m.h
    # interior node: int x^2 hat = h (x^2 + h^2/6)
    np.testing.assert_allclose(F[1:-1], h * (x[1:-1] ** 2 + h**2 / 6), rtol=1e-13)


def test_load_2d_bilinear():
    m = build_unit_square_mesh(6)
    assert assemble_load(m, lambda x, y: x * y).sum() == pytest.approx(0.25, abs=1e-13)


def test_interpolate_examples():
    m = build_interval_mesh(4)
    np.testing.assert_array_equal(interpolate(m, 1.0).values, 1.0)
    g = interpolate(m, lambda x: 1 + x * (1 - x) * np.sin(2 * np.pi * x))
    assert g.values[1] == pytest.approx(1.1875, abs=1e-14)


@given(meshes, st.data())
def test_interpolation_reproduces_p1(mesh, data):
    v = data.draw(arrays(float, mesh.num_nodes, elements=st.floats(-10, 10)))
    g = lambda *x: evaluate_p1(mesh, v, np.column_stack(x))
    np.testing.assert_allclose(interpolate(mesh, g).values, v, atol=1e-12)


def test_l2_project_zero_and_idempotent():
    m = build_unit_square_mesh(5)
    assert np.all(l2_project(m, 0.0).values == 0.0)
    rng = np.random.default_rng(3)
    v = rng.standard_normal(m.num_nodes)
    v[m.boundary_mask] = 0.0
    P = l2_project(m, FeFunction(m, v, zero_trace=True))
    assert P.zero_trace
    assert np.abs(P.values - v).max() <= 1e-12
    # a P1 function through the callable path is reproduced too
    g = lambda x, y: evaluate_p1(m, v, np.column_stack([x, y]))
    assert np.abs(l2_project(m, g).values - v).max() <= 1e-12


def test_l2_project_rate():
    g = lambda x: np.sin(np.pi * x)
    pts = []
    for n in (8, 16, 32, 64):
        fine = build_interval_mesh(16 * n)
        Pg = l2_project(build_interval_mesh(n), g)
        err = evaluate_p1(Pg.mesh, Pg.values, fine.nodes) - g(fine.nodes[:, 0])
        pts.append((1 / n, norm_l2(fine, err)))
    assert fit_rate(pts).slope >= 1.9


def test_transfer_between_meshes():
    coarse = build_unit_square_mesh(4)
    fine = build_unit_square_mesh(8)
    u = interpolate(coarse, lambda x, y: 1 + 2 * x - 3 * y)
    np.testing.assert_allclose(transfer(u, fine), 1 + 2 * fine.nodes[:, 0] - 3 * fine.nodes[:, 1],
                               atol=1e-13)


def test_fefunction_validation():
    m = build_interval_mesh(4)
    with pytest.raises(ValueError):
        FeFunction(m, np.ones(4))
    with pytest.raises(ValueError):
        FeFunction(m, np.ones(5), zero_trace=True)
    with pytest.raises(ValueError):
        Potential(m, np.full(5, 3.0))
    with pytest.raises(ValueError):
        Potential(m, np.ones(5), c0=2.0, c1=1.0)
    q = Potential.from_field(m, lambda x: 3 * x, clip=True)
    assert q.values.max() == 2.0 and q.values.min() == 0.4


def test_solve_spd_trivial():
    I = sp.identity(5, format="csr")
    b = np.arange(5.0)
    for method in ("direct", "pcg"):
        np.testing.assert_array_equal(solve_spd(I, b, method=method), b)
        np.testing.assert_array_equal(solve_spd(I, np.zeros(5), method=method), 0.0)


@pytest.mark.parametrize("method", ["direct", "pcg"])
def test_solve_spd_poisson_vs_dense(method):
    m = build_interval_mesh(8)
    I = m.interior
    A = assemble_stiffness(m)[I][:, I]
    b = assemble_load(m, 1.0)[I]
    x = solve_spd(A, b, method=method)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=0, atol=1e-9)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10


def test_pcg_failure_reports_residual():
    m = build_interval_mesh(64)
    I = m.interior
    A = assemble_stiffness(m)[I][:, I]
    with pytest.raises(SolverFailure) as info:
        pcg(A, np.ones(I.size), maxiter=2)
    assert info.value.residual > 0


def test_spd_solver_many_rhs():
    m = build_unit_square_mesh(6)
    I = m.interior
    A = (assemble_stiffness(m) + assemble_mass(m))[I][:, I]
    solve = SpdSolver(A, check_every=1)
    rng = np.random.default_rng(0)
    for _ in range(3):
        b = rng.standard_normal(I.size)
        x = solve(b)
        assert backward_error(A, x, b) <= 1e-14


def test_norms():
    m = build_interval_mesh(64)
    one = np.ones(m.num_nodes)
    assert norm_l2(m, one) == pytest.approx(1.0, abs=1e-13)
    assert seminorm_h1(m, one) == pytest.approx(0.0, abs=1e-6)
    s = interpolate(m, lambda x: np.sin(np.pi * x))
    assert norm_l2(m, s) == pytest.approx(np.sqrt(0.5), abs=1e-3)
    assert norm_h1(m, s) ** 2 == pytest.approx(norm_l2(m, s) ** 2 + seminorm_h1(m, s) ** 2)


@given(meshes, st.data(), st.one_of(st.just(0.0), st.floats(1e-6, 100), st.floats(-100, -1e-6)))
def test_norm_homogeneity(mesh, data, c):
    v = data.draw(arrays(float, mesh.num_nodes, elements=st.floats(-10, 10)))
    assert norm_l2(mesh, c * v) == pytest.approx(abs(c) * norm_l2(mesh, v), rel=1e-12, abs=1e-300)
    assert seminorm_h1(mesh, 2 * v) == pytest.approx(2 * seminorm_h1(mesh, v), rel=1e-12, abs=1e-300)


@given(meshes, st.data())
def test_coercive_with_admissible_potential(mesh, data):
    q = data.draw(arrays(float, mesh.num_nodes, elements=st.floats(0.0, 2.0)))
    I = mesh.interior
    if not I.size:
        return
    K = (assemble_stiffness(mesh) + assemble_weighted_mass(mesh, q))[I][:, I].toarray()
    assert np.linalg.eigvalsh(K).min() > 0
