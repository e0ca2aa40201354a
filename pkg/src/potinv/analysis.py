"""Error metrics, rate fitting, the 1D Green's function and stability/positivity checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fem import (
    Field, FeFunction, Potential, _reference_mass, _values, evaluate_p1, interpolate,
    norm_l2, seminorm_h1, space,
)
from .forward import TimeWindow, Trajectory, solve_elliptic, solve_parabolic
from .mesh import InteriorRegion, Mesh, build_mesh


@dataclass(frozen=True)
class ErrorReport:
    e_q: float
    e_q_interior: float
    e_q_weighted: float
    e_u: float
    eta: float


@dataclass(frozen=True)
class RateFit:
    points: tuple
    slope: float
    intercept: float


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    ratio: float


def _q_difference(mesh: Mesh, q_true, q_star) -> np.ndarray:
    if isinstance(q_true, (FeFunction, np.ndarray)):
        qt = _values(mesh, q_true)
    else:
        qt = interpolate(mesh, q_true).values
    return qt - _values(mesh, q_star)


def error_q(mesh: Mesh, q_true, q_star, region: Optional[InteriorRegion] = None) -> float:
    """L2 distance between the interpolated true potential and ``q_star``.

    With ``region`` only elements whose vertices all lie in the region count.
    """
    dq = _q_difference(mesh, q_true, q_star)
    if region is None:
        return norm_l2(mesh, dq)
    el = mesh.elements
    keep = region.node_mask[el].all(axis=1)
    d = dq[el[keep]]
    local = np.einsum("ea,ab,eb->e", d, _reference_mass(mesh.dim), d)
    return float(np.sqrt(max((local * mesh.element_measures[keep]).sum(), 0.0)))


def error_weighted(mesh: Mesh, q_true, q_star, u_ref) -> float:
    """``||(q_true - q_star) u_ref||_L2``; the squared product is integrated exactly (degree 4)."""
    dq = _q_difference(mesh, q_true, q_star)
    u = _values(mesh, u_ref)
    _, weights, bary = space(mesh).quadrature_points(degree=4)
    el = mesh.elements
    prod = (dq[el] @ bary.T) * (u[el] @ bary.T)
    return float(np.sqrt((weights * prod**2).sum()))


def error_u_elliptic(mesh: Mesh, u_true, u_star) -> float:
    return norm_l2(mesh, _values(mesh, u_true) - _values(mesh, u_star))


def error_u_parabolic(traj_a, traj_b, window: TimeWindow) -> float:
    """``(tau sum_{n=N0..N} ||a^n - b^n||^2)^(1/2)`` for two trajectories on the same grid."""
    a = traj_a.states if isinstance(traj_a, Trajectory) else np.asarray(traj_a)
    b = traj_b.states if isinstance(traj_b, Trajectory) else np.asarray(traj_b)
    if a.shape != b.shape or a.shape[0] != window.N + 1:
        raise ValueError(f"trajectory shapes {a.shape} and {b.shape} do not match the window")
    mesh = traj_a.mesh if isinstance(traj_a, Trajectory) else traj_b.mesh
    M = space(mesh).mass
    r = (a - b)[window.N0:]
    return float(np.sqrt(window.tau * np.einsum("ni,ni->", r, (M @ r.T).T)))


def reference_state_elliptic(mesh: Mesh, q_true: Field, f: Field, refine: int = 2) -> np.ndarray:
    """``u(q_true)`` from a solve on a ``refine`` times finer mesh, sampled at the nodes of ``mesh``.

    The nodal error of the reference is about ``refine**-2`` times that of ``mesh``.
    """
    fine = build_mesh(mesh.dim, refine * mesh.n)
    u = solve_elliptic(fine, interpolate(fine, q_true), f)
    return evaluate_p1(fine, u.values, mesh.nodes)


def reference_trajectory(mesh: Mesh, q_true: Field, f, u0: Field, T: float, N: int,
                         refine: int = 2) -> np.ndarray:
    """``u^n(q_true)`` with ``refine`` times more cells and steps, sampled on the coarse grid."""
    fine = build_mesh(mesh.dim, refine * mesh.n)
    traj = solve_parabolic(fine, interpolate(fine, q_true), f, u0, T, refine * N)
    return np.stack([evaluate_p1(fine, s, mesh.nodes) for s in traj.states[::refine]])


def weighted_norms_per_step(states: np.ndarray, mesh: Mesh, q_true, q_star) -> np.ndarray:
    return np.array([error_weighted(mesh, q_true, q_star, s) for s in states])


def triple_sum_from_weights(w: np.ndarray, tau: float) -> float:
    """``tau^3 sum_{j=1..m} sum_{i=1..j} sum_{n=i..j} w_n`` in O(m).

    ``w`` holds ``w_1..w_m`` (the steps after the window start).
    """
    w = np.asarray(w, dtype=float)
    S = np.concatenate([[0.0], np.cumsum(w)])  # S[k] = w_1 + ... + w_k
    cumS = np.cumsum(S)  # cumS[k] = S[0] + ... + S[k]
    j = np.arange(1, w.size + 1)
    # sum_{i=1..j} (S_j - S_{i-1}) = j S_j - (S_0 + ... + S_{j-1})
    return float(tau**3 * np.sum(j * S[1:] - cumS[:-1]))


def triple_sum_brute(w: np.ndarray, tau: float) -> float:
    m = len(w)
    total = 0.0
    for j in range(1, m + 1):
        for i in range(1, j + 1):
            for n in range(i, j + 1):
                total += w[n - 1]
    return tau**3 * total


def triple_sum_weighted(traj_ref, q_true, q_star, window: TimeWindow) -> float:
    """Space-time weighted error with ``w_n = ||(q_true - q_star) u^n||`` for ``n > N0``."""
    states = traj_ref.states if isinstance(traj_ref, Trajectory) else np.asarray(traj_ref)
    mesh = traj_ref.mesh if isinstance(traj_ref, Trajectory) else q_star.mesh
    if states.shape[0] != window.N + 1:
        raise ValueError("trajectory does not match the window grid")
    w = weighted_norms_per_step(states[window.N0 + 1:], mesh, q_true, q_star)
    return triple_sum_from_weights(w, window.tau)


def fit_rate(points: Sequence) -> RateFit:
    """Least-squares slope of ``log y`` against ``log x``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (x, y) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("rate fitting needs positive finite entries")
    if np.unique(pts[:, 0]).size < 2:
        raise ValueError("need at least two distinct x values")
    slope, intercept = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return RateFit(tuple(map(tuple, pts)), float(slope), float(intercept))


def green_1d(x, y, c1: float, a: float = 0.0, b: float = 1.0):
    """Green's function of ``-u'' + c1 u`` on ``(a, b)`` with zero Dirichlet data.

    Evaluates the two-branch exponential closed form; accepts arrays.
    """
    if c1 <= 0:
        raise ValueError("c1 must be positive")
    if not a < b:
        raise ValueError("need a < b")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.sqrt(c1)
    den = 2 * s * (np.exp(s * (2 * a + y)) - np.exp(s * (2 * b + y)))
    left = (
        -np.exp(2 * s * a) * (np.exp(2 * s * y) - np.exp(2 * s * b)) / den
        * (np.exp(-s * x) - np.exp(s * (x - 2 * a)))
    )
    right = (
        -np.exp(2 * s * b) * (np.exp(2 * s * y) - np.exp(2 * s * a)) / den
        * (np.exp(-s * x) - np.exp(s * (x - 2 * b)))
    )
    out = np.where(x <= y, left, right)
    return float(out) if out.ndim == 0 else out


def green_lower_bound_constant(c1: float, a: float = 0.0, b: float = 1.0, points: int = 100,
                               safety: float = 0.9) -> float:
    """``safety`` times the smallest ``G(x, y) / |x - y|`` with ``0 < |x-y| <= dist(x)/2``.

    Scans grid pairs plus, for every grid ``x``, the two extreme partners
    ``y = x +- dist(x)/2``, where the ratio is smallest since ``G`` decays away
    from the diagonal.  The safety factor covers ``x`` between grid points.
    """
    t = np.linspace(a, b, points)
    X, Y = np.meshgrid(t, t, indexing="ij")
    dist = np.minimum(X - a, b - X)
    sel = (np.abs(X - Y) <= 0.5 * dist) & (X != Y)
    x = t[(t > a) & (t < b)]
    if not sel.any() and x.size == 0:
        raise ValueError("grid too coarse to contain admissible pairs")
    r = 0.5 * np.minimum(x - a, b - x)
    xs = np.concatenate([X[sel], x, x])
    ys = np.concatenate([Y[sel], x - r, x + r])
    return safety * float((green_1d(xs, ys, c1, a, b) / np.abs(xs - ys)).min())


def check_positivity(mesh: Mesh, u, beta: float) -> float:
    """Best constant ``C`` with ``u(x) >= C dist(x, boundary)^beta`` over interior nodes.

    ``u`` is a nodal vector, an FeFunction, or an array of states (one per row);
    for states the infimum runs over all rows.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if isinstance(u, Trajectory):
        vals = u.states
    elif isinstance(u, FeFunction):
        vals = u.values[None, :]
    else:
        vals = np.atleast_2d(np.asarray(u, dtype=float))
    I = mesh.interior
    return float((vals[:, I] / mesh.distances[I] ** beta).min())


def stability_experiment(mesh: Mesh, q1, q2, f: Field) -> StabilityReport:
    """Weighted difference of potentials against the square root of the H1 state difference."""
    u1 = solve_elliptic(mesh, q1, f)
    u2 = solve_elliptic(mesh, q2, f)
    lhs = error_weighted(mesh, _values(mesh, q1), q2, u1)
    du = u1.values - u2.values
    rhs = (norm_l2(mesh, du) ** 2 + seminorm_h1(mesh, du) ** 2) ** 0.25
    ratio = 0.0 if lhs == 0.0 and rhs == 0.0 else lhs / rhs
    return StabilityReport(lhs, float(rhs), float(ratio))


def random_admissible_potential(mesh: Mesh, rng: np.random.Generator, c0=0.4, c1=2.0,
                                modes: int = 6) -> Potential:
    """Smooth random potential: a constant plus a few decaying sine modes, clipped into the box."""
    base = rng.uniform(c0 + 0.2, c1 - 0.2)
    k = np.arange(1, modes + 1)
    coef = rng.uniform(-0.5, 0.5, size=(mesh.dim, modes)) / k
    vals = np.full(mesh.num_nodes, base)
    for d in range(mesh.dim):
        vals = vals + np.sin(np.pi * np.outer(mesh.nodes[:, d], k)) @ coef[d]
    return Potential(mesh, np.clip(vals, c0, c1), c0=c0, c1=c1)


def sample_stability(mesh: Mesh, f: Field, pairs: int = 200, seed: int = 0,
                     c0=0.4, c1=2.0) -> list:
    rng = np.random.default_rng(seed)
    return [
        stability_experiment(
            mesh, random_admissible_potential(mesh, rng, c0, c1),
            random_admissible_potential(mesh, rng, c0, c1), f,
        )
        for _ in range(pairs)
    ]


def eta_elliptic(h: float, delta: float, alpha: float) -> float:
    return h**2 + delta + np.sqrt(alpha)


def eta_parabolic(tau: float, h: float, delta: float, alpha: float) -> float:
    return tau + h**2 + delta + np.sqrt(alpha)
