"""Tikhonov-regularized output least squares for the potential, and its CG solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .fem import Field, Potential, SpdSolver, _values, evaluate_p1, norm_l2, space
from .forward import TimeField, TimeWindow, observe, solve_elliptic, solve_parabolic
from .mesh import Mesh


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True, eq=False)
class Observation:
    """Noisy data on ``mesh``.

    ``data`` is a nodal vector (elliptic) or an array of observed states
    ``(N - N0 + 1, M)`` on the grid of ``window`` (parabolic).
    ``delta`` is the L2 (resp. tau-weighted space-time L2) norm of ``data - exact``.
    """

    kind: str
    mesh: Mesh
    data: np.ndarray
    exact: np.ndarray
    delta: float
    epsilon: float
    seed: int
    window: Optional[TimeWindow] = None

    def on_grid(self, mesh: Mesh, N: Optional[int] = None) -> np.ndarray:
        """Data transferred to another mesh, and for parabolic data to a coarser time grid.

        The coarse step count must divide the data step count; observed levels are
        sampled, not averaged, so the noise per state is unchanged.
        """
        if self.kind == "elliptic":
            return evaluate_p1(self.mesh, self.data, mesh.nodes)
        w = self.window
        N = w.N if N is None else N
        if w.N % N:
            raise ValueError(f"time grid with N={N} does not nest in the data grid N={w.N}")
        stride = w.N // N
        coarse = w.refine(N)
        rows = np.arange(coarse.N0, N + 1) * stride - w.N0
        return np.stack([evaluate_p1(self.mesh, self.data[r], mesh.nodes) for r in rows])


def make_observation_elliptic(mesh: Mesh, q_true, f: Field, epsilon: float, seed: int) -> Observation:
    """``z = u_h(q_true) + epsilon * max|u_h| * xi`` with i.i.d. standard normal nodal ``xi``."""
    if epsilon < 0:
        raise ValueError("noise level must be nonnegative")
    u = solve_elliptic(mesh, q_true, f).values
    xi = np.random.default_rng(seed).standard_normal(mesh.num_nodes)
    noise = epsilon * np.abs(u).max() * xi
    return Observation("elliptic", mesh, u + noise, u, norm_l2(mesh, noise), epsilon, seed)


def make_observation_parabolic(
    mesh: Mesh, q_true, f: TimeField, u0: Field, window: TimeWindow, epsilon: float, seed: int
) -> Observation:
    """Perturb every observed state with fresh Gaussians scaled by ``epsilon * max|u|``."""
    if epsilon < 0:
        raise ValueError("noise level must be nonnegative")
    traj = solve_parabolic(mesh, q_true, f, u0, window.T, window.N)
    u = observe(traj, window)
    xi = np.random.default_rng(seed).standard_normal(u.shape)
    noise = epsilon * np.abs(u).max() * xi
    Mmat = space(mesh).mass
    delta = np.sqrt(window.tau * np.einsum("ni,ni->", noise, (Mmat @ noise.T).T))
    return Observation("parabolic", mesh, u + noise, u.copy(), float(delta), epsilon, seed, window)


# --------------------------------------------------------------------------
# regularized objective

@dataclass(eq=False)
class TikhonovProblem:
    """Discrete regularized problem on ``mesh`` with data ``z`` already on that mesh.

    Elliptic when ``window`` is None; otherwise parabolic with initial state ``u0``
    on the grid of ``window``, and ``z`` holding the observed levels ``N0..N``.
    """

    mesh: Mesh
    z: np.ndarray
    alpha: float
    f: object = 1.0
    c0: float = 0.4
    c1: float = 2.0
    u0: object = None
    window: Optional[TimeWindow] = None

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        self.z = np.asarray(self.z, dtype=float)
        M = self.mesh.num_nodes
        if self.window is None:
            if self.z.shape != (M,):
                raise ValueError(f"elliptic data must have shape ({M},)")
        else:
            if self.u0 is None:
                raise ValueError("parabolic problem needs an initial state u0")
            m = self.window.N - self.window.N0 + 1
            if self.z.shape != (m, M):
                raise ValueError(f"parabolic data must have shape ({m}, {M}), got {self.z.shape}")

    @property
    def parabolic(self) -> bool:
        return self.window is not None

    @cached_property
    def _space(self):
        return space(self.mesh)

    def potential(self, values) -> Potential:
        return Potential(self.mesh, np.asarray(values, dtype=float), c0=self.c0, c1=self.c1)

    def states(self, q) -> np.ndarray:
        """Forward solution: nodal vector, or the full trajectory array ``(N+1, M)``."""
        qv = _values(self.mesh, q)
        cached = self.__dict__.get("_last_state")
        if cached is not None and np.array_equal(cached[0], qv):
            return cached[1]
        if self.parabolic:
            w = self.window
            u = solve_parabolic(self.mesh, qv, self.f, self.u0, w.T, w.N).states
        else:
            u = solve_elliptic(self.mesh, qv, self.f).values
        u.setflags(write=False)
        # the line search evaluates J at the point where the next gradient is taken
        self.__dict__["_last_state"] = (qv.copy(), u)
        return u

    def _misfit(self, u):
        Mmat = self._space.mass
        if self.parabolic:
            r = u[self.window.N0:] - self.z
            Mr = (Mmat @ r.T).T
            return r, Mr, 0.5 * self.window.tau * np.einsum("ni,ni->", r, Mr)
        r = u - self.z
        Mr = Mmat @ r
        return r, Mr, 0.5 * float(r @ Mr)

    def _penalty(self, qv):
        Aq = self._space.stiffness @ qv
        return Aq, 0.5 * self.alpha * float(qv @ Aq)

    def value(self, q) -> float:
        qv = _values(self.mesh, q)
        _, _, data = self._misfit(self.states(qv))
        return data + self._penalty(qv)[1]

    def value_difference(self, q, v, s: float) -> float:
        """``J(q + s v) - J(q - s v)`` without cancellation.

        The state difference solves ``K(q+sv) du = -2s M_v u(q-sv)`` (with the
        backward Euler recursion in time), which follows from subtracting the
        two forward problems; no difference of nearly equal numbers is formed.
        """
        qv = _values(self.mesh, q)
        v = np.asarray(v, dtype=float)
        qp, qm = qv + s * v, qv - s * v
        S = self._space
        I = self.mesh.interior
        Kp = (S.stiffness + S.weighted_mass(qp))[I][:, I]
        Mv = S.weighted_mass(v)[I][:, I]
        um = np.array(self.states(qm))
        up = np.array(self.states(qp))
        du = np.zeros_like(um)
        if self.parabolic:
            w = self.window
            Mi = S.mass[I][:, I]
            solve = SpdSolver(Mi / w.tau + Kp, check_every=64)
            for n in range(1, w.N + 1):
                du[n, I] = solve(Mi @ du[n - 1, I] / w.tau - 2 * s * (Mv @ um[n, I]))
            rsum = up[w.N0:] + um[w.N0:] - 2 * self.z
            data = 0.5 * w.tau * np.einsum("ni,ni->", rsum, (S.mass @ du[w.N0:].T).T)
        else:
            du[I] = SpdSolver(Kp)(-2 * s * (Mv @ um[I]))
            data = 0.5 * float((up + um - 2 * self.z) @ (S.mass @ du))
        return float(data) + 2 * self.alpha * s * float(v @ (S.stiffness @ qv))

    def value_and_gradient(self, q):
        """Objective and its exact gradient w.r.t. nodal values, via the discrete adjoint."""
        qv = _values(self.mesh, q)
        S = self._space
        I = self.mesh.interior
        u = self.states(qv)
        _, Mr, data = self._misfit(u)
        Aq, pen = self._penalty(qv)
        K = (S.stiffness + S.weighted_mass(qv))[I][:, I]
        grad = self.alpha * Aq
        if not self.parabolic:
            p = np.zeros(self.mesh.num_nodes)
            p[I] = SpdSolver(K)(Mr[I])
            grad -= S.triple_action(u, p)
            return data + pen, grad

        w = self.window
        tau, N, N0 = w.tau, w.N, w.N0
        Mi = S.mass[I][:, I]
        solve = SpdSolver(Mi / tau + K, check_every=64)
        P = np.zeros((N + 1, self.mesh.num_nodes))
        p_next = np.zeros(I.size)
        for n in range(N, 0, -1):
            rhs = Mi @ p_next / tau
            if n >= N0:
                rhs += tau * Mr[n - N0, I]
            p_next = P[n, I] = solve(rhs)
        grad -= S.triple_action_sum(u[1:], P[1:])
        return data + pen, grad


def objective(problem: TikhonovProblem, q) -> float:
    return problem.value(q)


def gradient(problem: TikhonovProblem, q) -> np.ndarray:
    return problem.value_and_gradient(q)[1]


# --------------------------------------------------------------------------
# projected nonlinear conjugate gradients

def project_box(values, c0: float, c1: float) -> np.ndarray:
    if not c0 < c1:
        raise ValueError(f"need c0 < c1, got ({c0}, {c1})")
    return np.clip(np.asarray(values, dtype=float), c0, c1)


def projected_gradient(q: np.ndarray, g: np.ndarray, c0: float, c1: float) -> np.ndarray:
    """Zero the components whose descent step would leave the box."""
    gp = g.copy()
    gp[(q <= c0) & (g > 0)] = 0.0
    gp[(q >= c1) & (g < 0)] = 0.0
    return gp


@dataclass
class CGOptions:
    max_iters: int = 200
    grad_tol: Optional[float] = None
    """Absolute tolerance on the projected gradient; default ``1e-8 * (1 + |J(q0)|)``."""
    rel_grad_tol: float = 0.0
    """Optional extra stop on ``|g_proj| <= rel_grad_tol * |g_proj(q0)|``."""
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 50
    interpolate: bool = True
    initial_step: Optional[float] = None
    """First trial step; default scales the first direction to a max nodal change of 0.1."""


@dataclass
class ReconstructionResult:
    q_star: Potential
    objective_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = "tolerance"


def _line_search(problem, q, J, g, d, s, opts):
    """Projected Armijo backtracking from trial step ``s``.

    An accepted step is refined once by minimizing the quadratic through
    ``J(0)``, ``J'(0)`` and ``J(s)``; the refinement is kept only if it is lower.
    """
    c0, c1 = problem.c0, problem.c1

    def trial(t):
        qt = project_box(q + t * d, c0, c1)
        Jt = problem.value(qt)
        ok = Jt <= J + opts.armijo * float(g @ (qt - q)) and Jt <= J
        return qt, Jt, ok

    for _ in range(opts.max_backtracks):
        q_try, J_try, ok = trial(s)
        if ok:
            break
        s *= opts.shrink
    else:
        return None

    if opts.interpolate:
        slope = float(g @ d)
        curv = (J_try - J - slope * s) / s**2
        if curv > 0:
            s_q = -slope / (2 * curv)
            if 1e-2 * s < s_q < 1e2 * s and abs(s_q - s) > 0.05 * s:
                q_q, J_q, ok_q = trial(s_q)
                if ok_q and J_q < J_try:
                    # leave the cached forward state at the point we return
                    problem.value(q_q)
                    return s_q, q_q
        problem.value(q_try)
    return s, q_try


def reconstruct(problem: TikhonovProblem, q0, opts: Optional[CGOptions] = None) -> ReconstructionResult:
    """Polak-Ribiere+ conjugate gradients with a projected Armijo backtracking search."""
    opts = CGOptions() if opts is None else opts
    c0, c1 = problem.c0, problem.c1
    q = project_box(_values(problem.mesh, q0), c0, c1)
    J, g = problem.value_and_gradient(q)
    gp = projected_gradient(q, g, c0, c1)
    gnorm0 = float(np.linalg.norm(gp))
    tol = opts.grad_tol if opts.grad_tol is not None else 1e-8 * (1.0 + abs(J))
    tol = max(tol, opts.rel_grad_tol * gnorm0)
    J_hist, g_hist = [J], [gnorm0]

    def finish(reason, k):
        return ReconstructionResult(problem.potential(q), J_hist, g_hist, k, reason)

    if gnorm0 <= tol:
        return finish("tolerance", 0)

    d = -gp
    gp_old = None
    step = opts.initial_step
    if step is None:
        step = 0.1 / np.abs(d).max()
    slope_old = None

    for k in range(1, opts.max_iters + 1):
        if gp_old is not None:
            beta = max(0.0, gp @ (gp - gp_old) / (gp_old @ gp_old))
            d = -gp + beta * d
            if gp @ d >= 0.0:
                d = -gp
        slope = float(gp @ d)
        if slope_old is not None:
            # reuse the previous step's predicted decrease as the first trial
            step = min(step * slope_old / slope, 1e3 * step)

        found = _line_search(problem, q, J, g, d, step, opts)
        if found is None:
            return finish("line_search_failure", k - 1)
        s, q_try = found

        q = q_try
        J, g = problem.value_and_gradient(q)
        gp_old, gp = gp, projected_gradient(q, g, c0, c1)
        step, slope_old = s, slope
        J_hist.append(J)
        g_hist.append(float(np.linalg.norm(gp)))
        if g_hist[-1] <= tol:
            return finish("tolerance", k)
    return finish("max_iters", opts.max_iters)


def default_q0(mesh: Mesh, value: float = 1.0, c0: float = 0.4, c1: float = 2.0) -> Potential:
    return Potential.constant(mesh, value, c0=c0, c1=c1)


def gradient_check(problem: TikhonovProblem, q, directions: int = 10, s: float = 1e-6,
                   seed: int = 0, stable: bool = True) -> np.ndarray:
    """Relative gaps between central differences of J and ``g . v`` for random ``v``.

    Directions are nodal Gaussians scaled to unit max norm.  With ``stable`` the
    difference ``J(q+sv) - J(q-sv)`` comes from :meth:`TikhonovProblem.value_difference`;
    otherwise J is evaluated twice and subtracted, which loses all accuracy for
    directions nearly orthogonal to the gradient.
    """
    qv = np.asarray(_values(problem.mesh, q), dtype=float)
    _, g = problem.value_and_gradient(qv)
    rng = np.random.default_rng(seed)
    out = np.empty(directions)
    for k in range(directions):
        v = rng.standard_normal(qv.size)
        v /= np.abs(v).max()
        if stable:
            diff = problem.value_difference(qv, v, s)
        else:
            diff = problem.value(qv + s * v) - problem.value(qv - s * v)
        exact = float(g @ v)
        out[k] = abs(diff / (2 * s) - exact) / abs(exact)
    return out
