"""Quadratic Lagrange elements on triangles: basis, quadrature, dof layout.

Velocity is a vector quadratic field.  Scalar nodes are the mesh vertices
followed by the edge midpoints; vector degrees of freedom interleave the two
components node-major, so scalar node ``s`` owns dofs ``2 s`` (x-component)
and ``2 s + 1`` (y-component).

Quadrature rules are given in barycentric coordinates with weights that sum
to one; integrals over an element are ``area * sum(w_q * f(x_q))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import TriMesh


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric quadrature on the reference triangle.

    Attributes
    ----------
    points : (n_q, 3) ndarray
        Barycentric coordinates of the quadrature points.
    weights : (n_q,) ndarray
        Positive weights summing to one.
    degree : int
        Highest total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _orbit1():
    return [(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)]


def _orbit3(a: float):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _rule_degree2() -> QuadratureRule:
    pts = _orbit3(1.0 / 6.0)
    w = [1.0 / 3.0] * 3
    return QuadratureRule(np.array(pts), np.array(w), 2)


def _rule_degree4() -> QuadratureRule:
    a1, w1 = 0.44594849091596488, 0.22338158967801147
    a2, w2 = 0.09157621350977074, 0.10995174365532187
    pts = _orbit3(a1) + _orbit3(a2)
    w = [w1] * 3 + [w2] * 3
    return QuadratureRule(np.array(pts), np.array(w), 4)


def _rule_degree5() -> QuadratureRule:
    s15 = math.sqrt(15.0)
    a1, w1 = (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0
    a2, w2 = (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0
    pts = _orbit1() + _orbit3(a1) + _orbit3(a2)
    w = [9.0 / 40.0] + [w1] * 3 + [w2] * 3
    return QuadratureRule(np.array(pts), np.array(w), 5)


def _rule_degree7() -> QuadratureRule:
    # Conical product of 4-point Gauss-Legendre (in s) with 4-point
    # Gauss-Jacobi weighted by (1 - y) (in y), via x = (1 - y) s.  Exact for
    # total degree 2*4 - 1 = 7 with strictly positive weights.
    n = 4
    xs, ws = roots_legendre(n)
    s = 0.5 * (xs + 1.0)
    ws = 0.5 * ws
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    y = 0.5 * (xj + 1.0)
    wy = 0.25 * wj
    S, Y = np.meshgrid(s, y, indexing="ij")
    X = (1.0 - Y) * S
    W = np.outer(ws, wy)
    lam = np.column_stack((1.0 - X.ravel() - Y.ravel(), X.ravel(), Y.ravel()))
    # Normalize: reference-triangle weights sum to the area 1/2.
    return QuadratureRule(lam, 2.0 * W.ravel(), 7)


_RULES = {2: _rule_degree2, 4: _rule_degree4, 5: _rule_degree5, 7: _rule_degree7}
_CACHE: dict[int, QuadratureRule] = {}


def quad_rule(degree: int) -> QuadratureRule:
    """Return the quadrature rule for a supported degree in {2, 4, 5, 7}."""
    if degree not in _RULES:
        raise ValueError(f"unsupported quadrature degree {degree}; supported: 2, 4, 5, 7")
    if degree not in _CACHE:
        _CACHE[degree] = _RULES[degree]()
    return _CACHE[degree]


# ---------------------------------------------------------------------------
# Quadratic Lagrange basis
# ---------------------------------------------------------------------------
# Local node order: vertices 0, 1, 2 then midpoints of edges (0,1), (1,2),
# (2,0).  Functions are expressed in barycentric coordinates.


def p2_values(bary: np.ndarray) -> np.ndarray:
    """Basis values at barycentric points; shape (n_points, 6)."""
    bary = np.atleast_2d(bary)
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack(
        (
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l0 * l1,
            4.0 * l1 * l2,
            4.0 * l2 * l0,
        )
    )


def p2_gradients(bary: np.ndarray) -> np.ndarray:
    """Reference-coordinate basis gradients; shape (n_points, 6, 2).

    Reference coordinates are (x, y) with barycentric (1 - x - y, x, y), so
    grad l0 = (-1, -1), grad l1 = (1, 0), grad l2 = (0, 1).
    """
    bary = np.atleast_2d(bary)
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    g = np.empty((bary.shape[0], 6, 2))
    g[:, 0, 0] = 1.0 - 4.0 * l0
    g[:, 0, 1] = 1.0 - 4.0 * l0
    g[:, 1, 0] = 4.0 * l1 - 1.0
    g[:, 1, 1] = 0.0
    g[:, 2, 0] = 0.0
    g[:, 2, 1] = 4.0 * l2 - 1.0
    g[:, 3, 0] = 4.0 * (l0 - l1)
    g[:, 3, 1] = -4.0 * l1
    g[:, 4, 0] = 4.0 * l2
    g[:, 4, 1] = 4.0 * l1
    g[:, 5, 0] = -4.0 * l2
    g[:, 5, 1] = 4.0 * (l0 - l2)
    return g


def p2_basis(point):
    """Values and reference gradients of the six basis functions at one point.

    Parameters
    ----------
    point : length-3 sequence
        Barycentric coordinates.

    Returns
    -------
    values : (6,) ndarray
    gradients : (6, 2) ndarray
    """
    bary = np.asarray(point, dtype=float).reshape(1, 3)
    return p2_values(bary)[0], p2_gradients(bary)[0]


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DofLayout:
    """Vector dof bookkeeping for one mesh.

    Attributes
    ----------
    n_scalar : int
        Scalar nodes (vertices + edge midpoints).
    n_total : int
        Vector dofs, ``2 * n_scalar``.
    dirichlet_dofs : (n_dir,) int ndarray
        Sorted unique dofs on the boundary (both components of every
        boundary vertex and boundary edge midpoint).
    is_dirichlet : (n_total,) bool ndarray
    """

    n_vertices: int
    n_edges: int
    n_scalar: int
    n_total: int
    dirichlet_dofs: np.ndarray
    is_dirichlet: np.ndarray


def dof_layout(mesh: TriMesh) -> DofLayout:
    """Build the node-major vector dof layout with boundary constraints."""
    n_scalar = mesh.n_vertices + mesh.n_edges
    n_total = 2 * n_scalar
    bnd_scalar = np.concatenate(
        (
            np.flatnonzero(mesh.vertex_on_boundary),
            mesh.n_vertices + np.flatnonzero(mesh.edge_on_boundary),
        )
    )
    dirichlet = np.sort(np.concatenate((2 * bnd_scalar, 2 * bnd_scalar + 1)))
    mask = np.zeros(n_total, dtype=bool)
    mask[dirichlet] = True
    return DofLayout(
        n_vertices=mesh.n_vertices,
        n_edges=mesh.n_edges,
        n_scalar=n_scalar,
        n_total=n_total,
        dirichlet_dofs=dirichlet,
        is_dirichlet=mask,
    )


def scalar_node_coords(mesh: TriMesh) -> np.ndarray:
    """Coordinates of all scalar nodes (vertices, then midpoints)."""
    return np.vstack((mesh.nodes, mesh.midpoints))


def tri_scalar_dofs(mesh: TriMesh) -> np.ndarray:
    """Scalar node indices of each triangle in local order; shape (n_tri, 6)."""
    return np.hstack((mesh.triangles, mesh.n_vertices + mesh.tri_edges))


def tri_vector_dofs(mesh: TriMesh) -> np.ndarray:
    """Vector dof indices of each triangle, components interleaved; (n_tri, 12)."""
    sd = tri_scalar_dofs(mesh)
    vd = np.empty((sd.shape[0], 12), dtype=np.int64)
    vd[:, 0::2] = 2 * sd
    vd[:, 1::2] = 2 * sd + 1
    return vd


@dataclass
class VelocityField:
    """Vector quadratic field: coefficient vector plus the time it represents.

    Dirichlet entries of ``coeffs`` hold the boundary values imposed at time
    ``t``.
    """

    coeffs: np.ndarray
    t: float


def interpolate_exact(func, mesh: TriMesh, layout: DofLayout, t: float) -> VelocityField:
    """Nodal interpolant of a vector function ``func(x, y, t) -> (n, 2)``."""
    xy = scalar_node_coords(mesh)
    vals = np.asarray(func(xy[:, 0], xy[:, 1], t), dtype=float)
    coeffs = np.empty(layout.n_total)
    coeffs[0::2] = vals[:, 0]
    coeffs[1::2] = vals[:, 1]
    return VelocityField(coeffs=coeffs, t=float(t))
