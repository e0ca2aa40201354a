#!/usr/bin/env python3
"""Forward convergence study with manufactured solutions (space in 1D and 2D, time in 1D)."""

import numpy as np

from potinv.analysis import fit_rate
from potinv.fem import evaluate_p1, interpolate, norm_l2
from potinv.forward import solve_elliptic, solve_parabolic
from potinv.mesh import build_interval_mesh, build_mesh


def space_study(dim, ns):
    if dim == 1:
        u = lambda x: np.sin(np.pi * x)
        q = lambda x: 1 + x
        f = lambda x: (np.pi**2 + 1 + x) * u(x)
    else:
        u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        q = lambda x, y: 1 + x * y
        f = lambda x, y: (2 * np.pi**2 + 1 + x * y) * u(x, y)
    pts = []
    for n in ns:
        m = build_mesh(dim, n)
        uh = solve_elliptic(m, interpolate(m, q), f)
        fine = build_mesh(dim, 4 * n)
        err = norm_l2(fine, evaluate_p1(m, uh.values, fine.nodes) - u(*fine.nodes.T))
        pts.append((1 / n, err))
        print(f"  {dim}D n={n:4d} L2 error {err:.4e}")
    print(f"  rate {fit_rate(pts).slope:.3f}")


def time_study(Ns, T=0.01, c=1.0):
    m = build_interval_mesh(512)
    exact = np.exp(-(np.pi**2 + c) * T) * np.sin(np.pi * m.nodes[:, 0])
    pts = []
    for N in Ns:
        traj = solve_parabolic(m, c, 0.0, lambda x: np.sin(np.pi * x), T, N)
        err = norm_l2(m, traj.states[-1] - exact)
        pts.append((T / N, err))
        print(f"  N={N:4d} error at T {err:.4e}")
    print(f"  rate {fit_rate(pts).slope:.3f}")


if __name__ == "__main__":
    print("elliptic, space")
    space_study(1, (16, 32, 64, 128, 256))
    space_study(2, (4, 8, 16, 32, 64))
    print("parabolic, time")
    time_study((10, 20, 40, 80, 160))
