"""Finite-element reconstruction of a potential coefficient from noisy distributed data."""

from .mesh import Mesh, build_interval_mesh, build_mesh, build_unit_square_mesh, interior_region
from .fem import FeFunction, Potential, interpolate, l2_project, norm_l2, seminorm_h1
from .forward import TimeWindow, Trajectory, solve_elliptic, solve_parabolic
from .inverse import (
    CGOptions, TikhonovProblem, make_observation_elliptic, make_observation_parabolic,
    reconstruct,
)

__all__ = [
    "Mesh", "build_interval_mesh", "build_unit_square_mesh", "build_mesh", "interior_region",
    "FeFunction", "Potential", "interpolate", "l2_project", "norm_l2", "seminorm_h1",
    "TimeWindow", "Trajectory", "solve_elliptic", "solve_parabolic",
    "CGOptions", "TikhonovProblem", "make_observation_elliptic", "make_observation_parabolic",
    "reconstruct",
]
