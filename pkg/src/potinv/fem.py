"""P1 finite elements on :class:`~potinv.mesh.Mesh`: assembly, transfer operators, norms, solves.

Matrices are ``scipy.sparse.csr_matrix``. Dirichlet conditions are imposed by
restricting systems to interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial
from typing import Callable, Union
import weakref

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

Field = Union[float, Callable[..., np.ndarray]]


class SolverFailure(RuntimeError):
    """Raised when a linear solve misses its residual target."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


# --------------------------------------------------------------------------
# functions on a mesh

@dataclass(frozen=True, eq=False)
class FeFunction:
    """Nodal coefficient vector of a P1 function.

    ``zero_trace`` marks membership in the subspace vanishing on the boundary.
    """

    mesh: Mesh
    values: np.ndarray
    zero_trace: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.num_nodes,):
            raise ValueError(
                f"expected {self.mesh.num_nodes} nodal values, got shape {values.shape}"
            )
        if self.zero_trace and np.any(values[self.mesh.boundary_mask] != 0.0):
            raise ValueError("zero-trace function has nonzero boundary values")
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class Potential(FeFunction):
    """Potential in the discrete admissible set ``c0 <= q <= c1``."""

    c0: float = 0.4
    c1: float = 2.0

    def __post_init__(self):
        super().__post_init__()
        if not (0.0 <= self.c0 < self.c1):
            raise ValueError(f"box bounds need 0 <= c0 < c1, got ({self.c0}, {self.c1})")
        if self.values.min() < self.c0 - 1e-14 or self.values.max() > self.c1 + 1e-14:
            raise ValueError(
                f"potential leaves the box [{self.c0}, {self.c1}]: "
                f"range [{self.values.min():.6g}, {self.values.max():.6g}]"
            )

    @classmethod
    def constant(cls, mesh: Mesh, value: float, c0: float = 0.4, c1: float = 2.0):
        return cls(mesh, np.full(mesh.num_nodes, float(value)), c0=c0, c1=c1)

    @classmethod
    def from_field(cls, mesh: Mesh, g: Field, c0: float = 0.4, c1: float = 2.0, clip=False):
        values = interpolate(mesh, g).values
        if clip:
            values = np.clip(values, c0, c1)
        return cls(mesh, values, c0=c0, c1=c1)


def _values(mesh: Mesh, v) -> np.ndarray:
    if isinstance(v, FeFunction):
        if v.mesh is not mesh:
            raise ValueError("function lives on a different mesh")
        return v.values
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(mesh.num_nodes, float(v))
    if v.shape != (mesh.num_nodes,):
        raise ValueError(f"expected {mesh.num_nodes} nodal values, got shape {v.shape}")
    return v


def evaluate_field(g: Field, points: np.ndarray) -> np.ndarray:
    """Evaluate a scalar field at ``points`` of shape ``(P, dim)``.

    Callables receive one coordinate array per dimension, ``g(x)`` or ``g(x, y)``.
    """
    if callable(g):
        out = g(*points.T)
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:1]).copy()
    return np.full(points.shape[0], float(g))


# --------------------------------------------------------------------------
# element tables

# Gauss-Legendre 3-point rule on the reference segment, exact to degree 5.
_G3 = np.sqrt(3.0 / 5.0) / 2.0
_QUAD_1D = (
    np.array([[0.5 + _G3, 0.5 - _G3], [0.5, 0.5], [0.5 - _G3, 0.5 + _G3]]),
    np.array([5.0, 8.0, 5.0]) / 18.0,
)
# Strang-Fix 4-point rule on triangles, exact to degree 3.
_QUAD_TRI3 = (
    np.array([[1 / 3, 1 / 3, 1 / 3], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]),
    np.array([-27.0, 25.0, 25.0, 25.0]) / 48.0,
)
# Dunavant 6-point rule on triangles, exact to degree 4.
_A4, _B4 = 0.445948490915965, 0.091576213509771
_W4a, _W4b = 0.223381589678011, 0.109951743655322
_QUAD_TRI4 = (
    np.array([
        [1 - 2 * _A4, _A4, _A4], [_A4, 1 - 2 * _A4, _A4], [_A4, _A4, 1 - 2 * _A4],
        [1 - 2 * _B4, _B4, _B4], [_B4, 1 - 2 * _B4, _B4], [_B4, _B4, 1 - 2 * _B4],
    ]),
    np.array([_W4a] * 3 + [_W4b] * 3),
)


def quadrature_rule(dim: int, degree: int = 3):
    """Barycentric points and weights (summing to 1) exact to ``degree``."""
    if dim == 1:
        if degree > 5:
            raise ValueError("1D rule is exact to degree 5 only")
        return _QUAD_1D
    if degree <= 3:
        return _QUAD_TRI3
    if degree == 4:
        return _QUAD_TRI4
    raise ValueError("triangle rules available up to degree 4")


def _simplex_moment(dim: int, powers) -> float:
    # int_K prod lambda_i^{a_i} = |K| d! prod a_i! / (d + sum a_i)!
    num = factorial(dim) * np.prod([factorial(a) for a in powers])
    return num / factorial(dim + sum(powers))


def _reference_mass(dim: int) -> np.ndarray:
    k = dim + 1
    out = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            p = [0] * k
            p[a] += 1
            p[b] += 1
            out[a, b] = _simplex_moment(dim, p)
    return out


def _reference_triple(dim: int) -> np.ndarray:
    k = dim + 1
    out = np.empty((k, k, k))
    for a in range(k):
        for b in range(k):
            for c in range(k):
                p = [0] * k
                p[a] += 1
                p[b] += 1
                p[c] += 1
                out[a, b, c] = _simplex_moment(dim, p)
    return out


class P1Space:
    """Cached element data and assembled operators for one mesh.

    Use :func:`space` to get the shared instance for a mesh.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        k = mesh.dim + 1
        el = mesh.elements
        self._rows = np.repeat(el, k, axis=1).ravel()
        self._cols = np.tile(el, (1, k)).ravel()
        self._ref_triple = _reference_triple(mesh.dim)

    def _assemble(self, local: np.ndarray) -> sp.csr_matrix:
        M = self.mesh.num_nodes
        mat = sp.coo_matrix((local.ravel(), (self._rows, self._cols)), shape=(M, M)).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        G = self.mesh.barycentric_gradients
        local = np.einsum("ead,ebd->eab", G, G) * self.mesh.element_measures[:, None, None]
        return self._assemble(local)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        local = self.mesh.element_measures[:, None, None] * _reference_mass(self.mesh.dim)
        return self._assemble(local)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return np.asarray(self.mass.sum(axis=1)).ravel()

    def weighted_mass(self, q: np.ndarray) -> sp.csr_matrix:
        ql = q[self.mesh.elements]
        local = np.einsum("ea,abc->ebc", ql, self._ref_triple)
        local *= self.mesh.element_measures[:, None, None]
        return self._assemble(local)

    def triple_action(self, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Vector ``r_i = int phi_i u p`` for P1 functions ``u`` and ``p``, exactly."""
        el = self.mesh.elements
        local = np.einsum("abc,eb,ec->ea", self._ref_triple, u[el], p[el])
        local *= self.mesh.element_measures[:, None]
        return np.bincount(el.ravel(), weights=local.ravel(), minlength=self.mesh.num_nodes)

    def triple_action_sum(self, U: np.ndarray, P: np.ndarray) -> np.ndarray:
        """``sum_n int phi_i u^n p^n`` for stacked states ``U``, ``P`` of shape ``(N, M)``."""
        el = self.mesh.elements
        C = np.einsum("neb,nec->ebc", U[:, el], P[:, el])
        local = np.einsum("abc,ebc->ea", self._ref_triple, C)
        local *= self.mesh.element_measures[:, None]
        return np.bincount(el.ravel(), weights=local.ravel(), minlength=self.mesh.num_nodes)

    def quadrature_points(self, degree: int = 3):
        """Physical quadrature points ``(E, Q, dim)``, weights ``(E, Q)`` and basis values ``(Q, k)``."""
        bary, w = quadrature_rule(self.mesh.dim, degree)
        xe = self.mesh.nodes[self.mesh.elements]
        pts = np.einsum("qa,ead->eqd", bary, xe)
        weights = self.mesh.element_measures[:, None] * w[None, :]
        return pts, weights, bary

    def load(self, f: Field) -> np.ndarray:
        pts, weights, bary = self.quadrature_points(3)
        E, Q, d = pts.shape
        fv = evaluate_field(f, pts.reshape(E * Q, d)).reshape(E, Q)
        local = np.einsum("eq,qa->ea", fv * weights, bary)
        el = self.mesh.elements
        return np.bincount(el.ravel(), weights=local.ravel(), minlength=self.mesh.num_nodes)

    @cached_property
    def interior_mass_solver(self):
        I = self.mesh.interior
        return SpdSolver(self.mass[I][:, I])


_SPACES: "weakref.WeakKeyDictionary[Mesh, P1Space]" = weakref.WeakKeyDictionary()


def space(mesh: Mesh) -> P1Space:
    sp_ = _SPACES.get(mesh)
    if sp_ is None:
        sp_ = _SPACES[mesh] = P1Space(mesh)
    return sp_


# --------------------------------------------------------------------------
# public assembly API

def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    return space(mesh).stiffness.copy()


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    return space(mesh).mass.copy()


def assemble_weighted_mass(mesh: Mesh, q) -> sp.csr_matrix:
    """Matrix of ``int q phi_i phi_j`` with ``q`` piecewise linear, integrated exactly."""
    return space(mesh).weighted_mass(_values(mesh, q))


def assemble_load(mesh: Mesh, f: Field) -> np.ndarray:
    """Vector of ``int f phi_i`` by a rule exact for cubics on each element."""
    return space(mesh).load(f)


def interpolate(mesh: Mesh, g: Field) -> FeFunction:
    return FeFunction(mesh, evaluate_field(g, mesh.nodes))


def l2_project(mesh: Mesh, g) -> FeFunction:
    """L2 projection onto the zero-trace P1 space."""
    S = space(mesh)
    if isinstance(g, FeFunction):
        b = S.mass @ _values(mesh, g)
    else:
        b = S.load(g)
    I = mesh.interior
    out = np.zeros(mesh.num_nodes)
    if I.size:
        out[I] = S.interior_mass_solver(b[I])
    return FeFunction(mesh, out, zero_trace=True)


def transfer(fn: FeFunction, target: Mesh) -> np.ndarray:
    """Values of the P1 function ``fn`` at the nodes of another mesh over the same domain."""
    return evaluate_p1(fn.mesh, fn.values, target.nodes)


def evaluate_p1(mesh: Mesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Point evaluation of a P1 function on a structured mesh."""
    n = mesh.n
    if mesh.dim == 1:
        return np.interp(points[:, 0], mesh.nodes[:, 0], values)
    x, y = points[:, 0] * n, points[:, 1] * n
    i = np.clip(np.floor(x).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(y).astype(np.int64), 0, n - 1)
    s, t = x - i, y - j
    ll = j * (n + 1) + i
    lr, ul, ur = ll + 1, ll + n + 1, ll + n + 2
    lower = t <= s
    return np.where(
        lower,
        (1 - s) * values[ll] + (s - t) * values[lr] + t * values[ur],
        (1 - t) * values[ll] + s * values[ur] + (t - s) * values[ul],
    )


# --------------------------------------------------------------------------
# solves

def _inf_norm(A) -> float:
    return float(np.asarray(abs(A).sum(axis=1)).ravel().max(initial=0.0))


def backward_error(A, x, b, A_norm: float | None = None) -> float:
    """Normwise backward error ``|Ax - b| / (|A| |x| + |b|)`` in the infinity norm."""
    r = np.abs(A @ x - b).max(initial=0.0)
    A_norm = _inf_norm(A) if A_norm is None else A_norm
    scale = A_norm * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    return float(r / scale) if scale > 0 else float(r)


def _check_residual(A, x, b, rtol, what, A_norm=None):
    res = backward_error(A, x, b, A_norm)
    if not np.isfinite(res) or res > rtol:
        raise SolverFailure(f"{what} missed tolerance {rtol:g}", float(res))


def pcg(A, b, rtol=1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradients."""
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return x
    dinv = 1.0 / A.diagonal()
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        if np.linalg.norm(r) <= rtol * bn:
            return x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailure(f"PCG did not converge in {maxiter} iterations",
                        float(np.linalg.norm(r) / bn))


def solve_spd(A, b, method: str = "direct", rtol: float = 1e-10) -> np.ndarray:
    """Solve an SPD system to relative residual ``rtol``."""
    b = np.asarray(b, dtype=float)
    if method == "pcg":
        x = pcg(sp.csr_matrix(A), b, rtol=rtol)
    elif method == "direct":
        if b.size == 0:
            return b.copy()
        x = spla.spsolve(sp.csc_matrix(A), b)
    else:
        raise ValueError(f"unknown method {method!r}")
    _check_residual(A, x, b, rtol, f"{method} solve")
    return np.asarray(x, dtype=float)


class SpdSolver:
    """Sparse LU factorization reused over many right-hand sides.

    The backward error is verified on the first solve and then every
    ``check_every`` solves (``0`` disables checking).
    """

    def __init__(self, A, rtol: float = 1e-10, check_every: int = 1):
        self.A = sp.csc_matrix(A)
        self.rtol = rtol
        self.check_every = check_every
        self._calls = 0
        self._norm = _inf_norm(self.A)
        # symmetric mode: diagonal pivots and a symmetric ordering, as suits SPD systems
        self._lu = spla.splu(
            self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        ) if self.A.shape[0] else None

    def __call__(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        x = self._lu.solve(np.asarray(b, dtype=float))
        if self.check_every and self._calls % self.check_every == 0:
            _check_residual(self.A, x, b, self.rtol, "factorized solve", self._norm)
        self._calls += 1
        return x


# --------------------------------------------------------------------------
# norms

def norm_l2(mesh: Mesh, v) -> float:
    v = _values(mesh, v)
    return float(np.sqrt(max(v @ (space(mesh).mass @ v), 0.0)))


def seminorm_h1(mesh: Mesh, v) -> float:
    v = _values(mesh, v)
    return float(np.sqrt(max(v @ (space(mesh).stiffness @ v), 0.0)))


def norm_h1(mesh: Mesh, v) -> float:
    return float(np.hypot(norm_l2(mesh, v), seminorm_h1(mesh, v)))
