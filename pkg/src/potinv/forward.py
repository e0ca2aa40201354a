"""Discrete forward maps: the elliptic P1 solution and the backward Euler trajectory."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .fem import FeFunction, Field, SpdSolver, _values, l2_project, space
from .mesh import Mesh

TimeField = Union[float, Callable[..., np.ndarray]]

_GRID_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``u^0..u^N`` stored row-wise in ``states`` of shape ``(N+1, M)``."""

    mesh: Mesh
    states: np.ndarray
    T: float

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.tau

    def state(self, n: int) -> FeFunction:
        return FeFunction(self.mesh, self.states[n], zero_trace=True)


@dataclass(frozen=True)
class TimeWindow:
    """Observation window ``[T0, T]`` aligned with a uniform grid of ``N`` steps."""

    T0: float
    T: float
    N: int

    def __post_init__(self):
        if self.T0 < 0 or self.T <= self.T0:
            raise ValueError(f"need 0 <= T0 < T, got T0={self.T0}, T={self.T}")
        if self.N < 1:
            raise ValueError("need at least one time step")
        k = self.T0 * self.N / self.T
        if abs(k - round(k)) > _GRID_TOL:
            raise ValueError(f"T0={self.T0} is not on the grid with tau={self.T / self.N}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def N0(self) -> int:
        return int(round(self.T0 * self.N / self.T))

    def refine(self, N: int) -> "TimeWindow":
        return TimeWindow(self.T0, self.T, N)


def _time_field(f: TimeField, t: float) -> Field:
    if callable(f):
        return lambda *x: f(t, *x)
    return float(f)


def solve_elliptic(mesh: Mesh, q, f: Field) -> FeFunction:
    """Solve ``(grad u, grad v) + (q u, v) = (f, v)`` over the zero-trace P1 space."""
    S = space(mesh)
    I = mesh.interior
    K = (S.stiffness + S.weighted_mass(_values(mesh, q)))[I][:, I]
    F = S.load(f)
    u = np.zeros(mesh.num_nodes)
    u[I] = SpdSolver(K)(F[I])
    return FeFunction(mesh, u, zero_trace=True)


def solve_parabolic(mesh: Mesh, q, f: TimeField, u0: Field, T: float, N: int) -> Trajectory:
    """Backward Euler with ``tau = T/N`` and ``u^0 = P_h u0``.

    ``f`` is a constant or a callable ``f(t, x[, y])``; it is sampled at ``t_n = n tau``.
    """
    if T <= 0 or N < 1:
        raise ValueError(f"need T > 0 and N >= 1, got T={T}, N={N}")
    S = space(mesh)
    I = mesh.interior
    tau = T / N
    Mi = S.mass[I][:, I]
    K = Mi / tau + (S.stiffness + S.weighted_mass(_values(mesh, q)))[I][:, I]
    solve = SpdSolver(K, check_every=64)
    states = np.zeros((N + 1, mesh.num_nodes))
    states[0] = l2_project(mesh, u0).values
    const_load = None if callable(f) else S.load(float(f))[I]
    for n in range(1, N + 1):
        Fn = const_load if const_load is not None else S.load(_time_field(f, n * tau))[I]
        states[n, I] = solve(Mi @ states[n - 1, I] / tau + Fn)
    return Trajectory(mesh, states, float(T))


def observe(traj: Trajectory, window: TimeWindow) -> np.ndarray:
    """Observed slice ``states[N0..N]``."""
    if window.N != traj.N or abs(window.T - traj.T) > _GRID_TOL * traj.T:
        raise ValueError("observation window does not match the trajectory's time grid")
    return traj.states[window.N0:]
