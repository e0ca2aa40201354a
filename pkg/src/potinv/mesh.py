"""Structured simplicial meshes of the unit interval and the unit square."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform P1 triangulation of ``(0, 1)`` or ``(0, 1)^2``.

    ``nodes`` has shape ``(M, dim)``, ``elements`` shape ``(E, dim + 1)``.
    ``n`` is the number of cells per coordinate direction.
    """

    dim: int
    n: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_mask: np.ndarray
    h: float

    def __post_init__(self):
        for arr in (self.nodes, self.elements, self.boundary_mask):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of nodes not on the boundary."""
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def element_measures(self) -> np.ndarray:
        x = self.nodes[self.elements]
        if self.dim == 1:
            return np.abs(x[:, 1, 0] - x[:, 0, 0])
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the local barycentric coordinates, ``(E, dim+1, dim)``."""
        x = self.nodes[self.elements]
        # Rows of inv(B) where B = [x1 - x0, ..., xd - x0] give grads of lambda_1..lambda_d.
        B = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
        Binv = np.linalg.inv(B)
        grads = np.empty((self.num_elements, self.dim + 1, self.dim))
        grads[:, 1:] = Binv
        grads[:, 0] = -Binv.sum(axis=1)
        return grads

    @cached_property
    def distances(self) -> np.ndarray:
        """Distance of every node to the boundary of the unit cube."""
        return np.minimum(self.nodes, 1.0 - self.nodes).min(axis=1).clip(min=0.0)

    @property
    def volume(self) -> float:
        return float(self.element_measures.sum())


@dataclass(frozen=True, eq=False)
class InteriorRegion:
    margin: float
    node_mask: np.ndarray


def build_interval_mesh(n: int) -> Mesh:
    """Uniform partition of [0, 1] into ``n`` segments."""
    if int(n) != n or n < 2:
        raise ValueError(f"interval mesh needs n >= 2 segments, got {n!r}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    boundary = np.zeros(n + 1, dtype=bool)
    boundary[[0, n]] = True
    return Mesh(1, n, x[:, None], elements, boundary, 1.0 / n)


def build_unit_square_mesh(n: int) -> Mesh:
    """Uniform ``n x n`` grid on [0, 1]^2, each cell cut along its lower-left to upper-right diagonal."""
    if int(n) != n or n < 2:
        raise ValueError(f"square mesh needs n >= 2 cells per side, got {n!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ll = (j * (n + 1) + i).ravel()
    lr, ul, ur = ll + 1, ll + n + 1, ll + n + 2
    # counter-clockwise orientation in both halves
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    boundary = (
        (np.abs(nodes) < _BOUNDARY_TOL) | (np.abs(nodes - 1.0) < _BOUNDARY_TOL)
    ).any(axis=1)
    return Mesh(2, n, nodes, elements, boundary, np.sqrt(2.0) / n)


def build_mesh(dim: int, n: int) -> Mesh:
    if dim == 1:
        return build_interval_mesh(n)
    if dim == 2:
        return build_unit_square_mesh(n)
    raise ValueError(f"only dim 1 and 2 are supported, got {dim}")


def boundary_distance(mesh: Mesh, node_index: int) -> float:
    if not 0 <= node_index < mesh.num_nodes:
        raise IndexError(f"node index {node_index} out of range")
    return float(mesh.distances[node_index])


def interior_region(mesh: Mesh, margin: float) -> InteriorRegion:
    """Nodes at distance at least ``margin`` from the boundary."""
    if not 0.0 <= margin < 0.5:
        raise ValueError(f"margin must lie in [0, 0.5), got {margin}")
    # small slack so that nodes sitting exactly at the margin are kept
    mask = mesh.distances >= margin - 1e-12
    if margin > 0:
        mask &= ~mesh.boundary_mask
    return InteriorRegion(float(margin), mask)


def dump_mesh(mesh: Mesh, path) -> None:
    """Write a plain-text node/element listing, for debugging."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.num_nodes}\n")
        for k, x in enumerate(mesh.nodes):
            fh.write(f"{k} " + " ".join(repr(float(c)) for c in x) + "\n")
        fh.write(f"# elements {mesh.num_elements}\n")
        for k, e in enumerate(mesh.elements):
            fh.write(f"{k} " + " ".join(str(int(v)) for v in e) + "\n")
