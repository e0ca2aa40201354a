import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from potinv.analysis import fit_rate
from potinv.fem import evaluate_p1, interpolate, l2_project, norm_l2
from potinv.forward import TimeWindow, observe, solve_elliptic, solve_parabolic
from potinv.mesh import build_interval_mesh, build_mesh, build_unit_square_mesh

T = 0.01


def _l2_error_fine(mesh, values, exact, refine=8):
    # measure against the exact function on a much finer mesh
    fine = build_mesh(mesh.dim, refine * mesh.n)
    diff = evaluate_p1(mesh, values, fine.nodes) - exact(*fine.nodes.T)
    return norm_l2(fine, diff)


def test_elliptic_zero_load():
    m = build_unit_square_mesh(4)
    assert np.all(solve_elliptic(m, 1.0, 0.0).values == 0.0)


@pytest.mark.parametrize("c", [0.0, 0.4, 2.0])
def test_elliptic_manufactured_1d(c):
    exact = lambda x: np.sin(np.pi * x)
    f = lambda x: (np.pi**2 + c) * np.sin(np.pi * x)
    pts = []
    for n in (8, 16, 32, 64, 128):
        m = build_interval_mesh(n)
        pts.append((1 / n, _l2_error_fine(m, solve_elliptic(m, c, f).values, exact)))
    assert fit_rate(pts).slope >= 1.9


def test_elliptic_closed_form_poisson():
    exact = lambda x: x * (1 - x) / 2
    pts = []
    for n in (8, 16, 32, 64, 128):
        m = build_interval_mesh(n)
        pts.append((1 / n, _l2_error_fine(m, solve_elliptic(m, 0.0, 1.0).values, exact)))
    assert fit_rate(pts).slope >= 1.9


def test_elliptic_manufactured_2d():
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    q = lambda x, y: 1 + x * y
    f = lambda x, y: (2 * np.pi**2 + 1 + x * y) * exact(x, y)
    pts = []
    for n in (4, 8, 16, 32):
        m = build_unit_square_mesh(n)
        u = solve_elliptic(m, interpolate(m, q), f)
        pts.append((1 / n, _l2_error_fine(m, u.values, exact, refine=4)))
    assert fit_rate(pts).slope >= 1.9


def test_elliptic_galerkin_residual():
    from potinv.fem import space
    m = build_unit_square_mesh(8)
    q = interpolate(m, lambda x, y: 1 + np.sin(np.pi * x) * np.sin(np.pi * y) / 2)
    u = solve_elliptic(m, q, 1.0)
    S = space(m)
    r = S.load(1.0) - (S.stiffness + S.weighted_mass(q.values)) @ u.values
    assert np.abs(r[m.interior]).max() <= 1e-12


def test_parabolic_zero_data():
    m = build_interval_mesh(8)
    traj = solve_parabolic(m, 1.0, 0.0, 0.0, T, 5)
    assert np.all(traj.states == 0.0)


def test_parabolic_invariants():
    m = build_unit_square_mesh(4)
    u0 = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    traj = solve_parabolic(m, 1.0, 1.0, u0, T, 7)
    assert traj.N == 7 and traj.tau * traj.N == pytest.approx(T, rel=1e-12)
    np.testing.assert_array_equal(traj.states[0], l2_project(m, u0).values)
    assert np.all(traj.states[:, m.boundary_mask] == 0.0)
    assert traj.state(3).zero_trace
    with pytest.raises(ValueError):
        solve_parabolic(m, 1.0, 1.0, u0, T, 0)


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_parabolic_time_rate(c):
    m = build_interval_mesh(400)
    x = m.nodes[:, 0]
    exact = np.exp(-(np.pi**2 + c) * T) * np.sin(np.pi * x)
    pts = []
    for N in (10, 20, 40, 80, 160):
        traj = solve_parabolic(m, c, 0.0, lambda x: np.sin(np.pi * x), T, N)
        pts.append((T / N, norm_l2(m, traj.states[-1] - exact)))
    assert fit_rate(pts).slope >= 0.9


def test_time_dependent_load_sampled_at_right_endpoint():
    # u0 = 0 and one step: M u1 / tau + (A + Mq) u1 = F(t1)
    m = build_interval_mesh(6)
    f = lambda t, x: t * np.ones_like(x)
    one = solve_parabolic(m, 0.0, f, 0.0, 0.5, 1)
    const = solve_parabolic(m, 0.0, 0.5, 0.0, 0.5, 1)
    np.testing.assert_allclose(one.states[1], const.states[1], rtol=1e-14)


def test_parabolic_steady_state():
    m = build_interval_mesh(32)
    traj = solve_parabolic(m, 1.0, 1.0, lambda x: np.sin(np.pi * x), 10.0, 1000)
    u_ell = solve_elliptic(m, 1.0, 1.0)
    assert norm_l2(m, traj.states[-1] - u_ell.values) <= 1e-6


@settings(max_examples=20)
@given(st.integers(4, 32), st.data())
def test_monotone_in_potential(n, data):
    m = build_interval_mesh(n)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    q1 = rng.uniform(0.4, 1.5, m.num_nodes)
    q2 = q1 + rng.uniform(0.0, 0.5, m.num_nodes)
    u1 = solve_elliptic(m, q1, 1.0).values
    u2 = solve_elliptic(m, q2, 1.0).values
    assert np.all(u2 <= u1 + 1e-14)


@settings(max_examples=20)
@given(st.integers(1, 2), st.integers(3, 12), st.data())
def test_nonnegative_states(dim, n, data):
    m = build_mesh(dim, n)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    q = rng.uniform(0.4, 2.0, m.num_nodes)
    assert solve_elliptic(m, q, 1.0).values.min() >= -1e-12
    u0 = (lambda x: np.sin(np.pi * x)) if dim == 1 else (lambda x, y: x * y * (1 - x) * (1 - y))
    traj = solve_parabolic(m, q, 1.0, u0, T, 10)
    assert traj.states[1:].min() >= -1e-12


def test_time_window():
    w = TimeWindow(0.0, T, 10)
    assert w.N0 == 0 and w.tau == pytest.approx(1e-3)
    assert TimeWindow(0.005, T, 10).N0 == 5
    with pytest.raises(ValueError):
        TimeWindow(0.0033, T, 10)
    with pytest.raises(ValueError):
        TimeWindow(0.02, T, 10)


def test_observe():
    m = build_interval_mesh(8)
    traj = solve_parabolic(m, 1.0, 1.0, lambda x: np.sin(np.pi * x), T, 10)
    np.testing.assert_array_equal(observe(traj, TimeWindow(0.0, T, 10)), traj.states)
    last = observe(traj, TimeWindow(T * 0.9, T, 10))
    assert last.shape == (2, m.num_nodes)
    np.testing.assert_array_equal(last, traj.states[-2:])
    with pytest.raises(ValueError):
        observe(traj, TimeWindow(0.0, T, 20))
