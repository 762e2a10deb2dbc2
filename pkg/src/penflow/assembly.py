"""Vectorized finite-element assembly of the per-step velocity system.

One implicit step of the penalized momentum equation solves

    (M / k + nu K + N(u*) + G(eps)) u = M u_prev / k + F(t_next)

with M the vector mass matrix, K the velocity gradient (viscous) matrix,
N(u*) the skew-symmetric linearized convection matrix, and G(eps) the
divergence penalty matrix whose element blocks are scaled by 1 / eps of
that element.  Boundary conditions are imposed by replacing constrained
rows with identity rows and eliminating the constrained columns into the
right-hand side, which keeps the symmetric contributions symmetric on the
unconstrained block.

All element integrals use a single quadrature rule of degree 5 (exact for
every term: convection integrands are degree 5, mass degree 4, the rest
degree 2); load vectors and error norms use the degree-7 rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import TriMesh, affine_maps
from .sparse import CsrPattern, element_pattern

_I2 = sp.identity(2, format="csr")


@dataclass(frozen=True)
class AssemblyCache:
    """Mesh-dependent tables computed once and reused every step."""

    mesh: TriMesh
    layout: fem.DofLayout
    area: np.ndarray
    # Degree-5 rule and basis tables for system matrices.
    wq: np.ndarray
    vals: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    # Degree-2 tables for the element divergence integrals.
    w2: np.ndarray
    gx2: np.ndarray
    gy2: np.ndarray
    # Degree-7 rule for load vectors and error norms.
    bary7: np.ndarray
    w7: np.ndarray
    vals7: np.ndarray
    gx7: np.ndarray
    gy7: np.ndarray
    # Dof maps and fixed sparsity patterns.
    scalar_dofs: np.ndarray
    vector_dofs: np.ndarray
    pattern_s: CsrPattern
    pattern_v: CsrPattern
    # Element matrices that do not change between steps.
    mass_local: np.ndarray
    stiff_local: np.ndarray
    graddiv_local: np.ndarray
    # Assembled step-independent matrices (vector-valued space).
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass_scalar: sp.csr_matrix
    stiffness_scalar: sp.csr_matrix


def _physical_gradients(inv_t: np.ndarray, bary: np.ndarray):
    """Physical x/y derivative tables (n_tri, n_q, 6) for one rule."""
    gref = fem.p2_gradients(bary)
    phys = np.einsum("tab,qib->tqia", inv_t, gref)
    return np.ascontiguousarray(phys[..., 0]), np.ascontiguousarray(phys[..., 1])


def build_cache(mesh: TriMesh, layout: Optional[fem.DofLayout] = None) -> AssemblyCache:
    """Precompute basis tables, dof maps, patterns, and constant matrices."""
    if layout is None:
        layout = fem.dof_layout(mesh)
    _, inv_t, _ = affine_maps(mesh)
    area = mesh.element_area

    rule5 = fem.quad_rule(5)
    vals = fem.p2_values(rule5.points)
    gx, gy = _physical_gradients(inv_t, rule5.points)

    rule2 = fem.quad_rule(2)
    gx2, gy2 = _physical_gradients(inv_t, rule2.points)

    rule7 = fem.quad_rule(7)
    vals7 = fem.p2_values(rule7.points)
    gx7, gy7 = _physical_gradients(inv_t, rule7.points)

    scalar_dofs = fem.tri_scalar_dofs(mesh)
    vector_dofs = fem.tri_vector_dofs(mesh)
    pattern_s = element_pattern(scalar_dofs, layout.n_scalar)
    pattern_v = element_pattern(vector_dofs, layout.n_total)

    mass_base = np.einsum("q,qi,qj->ij", rule5.weights, vals, vals)
    mass_local = area[:, None, None] * mass_base
    stiff_local = np.einsum("q,tqi,tqj->tij", rule5.weights, gx, gx)
    stiff_local += np.einsum("q,tqi,tqj->tij", rule5.weights, gy, gy)
    stiff_local *= area[:, None, None]

    div_rows = np.empty((area.shape[0], rule5.weights.shape[0], 12))
    div_rows[:, :, 0::2] = gx
    div_rows[:, :, 1::2] = gy
    graddiv_local = np.einsum("q,tqi,tqj->tij", rule5.weights, div_rows, div_rows)
    graddiv_local *= area[:, None, None]

    mass_scalar = pattern_s.assemble(mass_local)
    stiffness_scalar = pattern_s.assemble(stiff_local)
    mass = sp.kron(mass_scalar, _I2, format="csr")
    stiffness = sp.kron(stiffness_scalar, _I2, format="csr")

    return AssemblyCache(
        mesh=mesh,
        layout=layout,
        area=area,
        wq=rule5.weights,
        vals=vals,
        gx=gx,
        gy=gy,
        w2=rule2.weights,
        gx2=gx2,
        gy2=gy2,
        bary7=rule7.points,
        w7=rule7.weights,
        vals7=vals7,
        gx7=gx7,
        gy7=gy7,
        scalar_dofs=scalar_dofs,
        vector_dofs=vector_dofs,
        pattern_s=pattern_s,
        pattern_v=pattern_v,
        mass_local=mass_local,
        stiff_local=stiff_local,
        graddiv_local=graddiv_local,
        mass=mass,
        stiffness=stiffness,
        mass_scalar=mass_scalar,
        stiffness_scalar=stiffness_scalar,
    )


def assemble_mass(cache: AssemblyCache) -> sp.csr_matrix:
    """Vector mass matrix (cached; component blocks are identical)."""
    return cache.mass


def assemble_stiffness(cache: AssemblyCache) -> sp.csr_matrix:
    """Vector velocity-gradient matrix; the quadratic form is |grad u|^2."""
    return cache.stiffness


def _check_eps(cache: AssemblyCache, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (cache.mesh.n_triangles,):
        raise ValueError("eps must hold one value per element")
    if not np.all(np.isfinite(eps)) or np.any(eps <= 0.0):
        raise ValueError("every element penalty parameter must be positive and finite")
    return eps


def assemble_graddiv(cache: AssemblyCache, eps: np.ndarray) -> sp.csr_matrix:
    """Divergence penalty matrix: element blocks scaled by 1 / eps."""
    eps = _check_eps(cache, eps)
    scaled = cache.graddiv_local * (1.0 / eps)[:, None, None]
    return cache.pattern_v.assemble(scaled)


def element_coefficients(cache: AssemblyCache, coeffs: np.ndarray):
    """Per-element x and y component coefficients; each (n_tri, 6)."""
    sd = cache.scalar_dofs
    return coeffs[2 * sd], coeffs[2 * sd + 1]


def assemble_convection(cache: AssemblyCache, u_star: np.ndarray) -> sp.csr_matrix:
    """Skew-symmetrized convection matrix linearized at the field ``u_star``.

    The bilinear form is 0.5 (w . grad u, v) - 0.5 (w . grad v, u) with
    w = u_star, which is skew-symmetric by construction; the local blocks
    are built as E - E^T, so the assembled matrix satisfies N = -N^T
    exactly in floating point.
    """
    ux, uy = element_coefficients(cache, u_star)
    wx = np.einsum("ti,qi->tq", ux, cache.vals)
    wy = np.einsum("ti,qi->tq", uy, cache.vals)
    stream = wx[:, :, None] * cache.gx + wy[:, :, None] * cache.gy
    e1 = np.einsum("q,qi,tqj->tij", cache.wq, cache.vals, stream)
    local = e1 - e1.transpose(0, 2, 1)
    local *= 0.5 * cache.area[:, None, None]
    conv_scalar = cache.pattern_s.assemble(local)
    return sp.kron(conv_scalar, _I2, format="csr")


def quadrature_points(cache: AssemblyCache) -> np.ndarray:
    """Physical coordinates of the degree-7 points; shape (n_tri, n_q, 2)."""
    corners = cache.mesh.nodes[cache.mesh.triangles]
    return np.einsum("qk,tkd->tqd", cache.bary7, corners)


def assemble_forcing(cache: AssemblyCache, f: Callable, t: float) -> np.ndarray:
    """Load vector of a body force ``f(x, y, t) -> (n, 2)`` (degree-7 rule)."""
    xq = quadrature_points(cache)
    n_tri, n_q = xq.shape[0], xq.shape[1]
    fv = np.asarray(f(xq[..., 0].ravel(), xq[..., 1].ravel(), t), dtype=float)
    fv = fv.reshape(n_tri, n_q, 2)
    loads = np.einsum("q,qi,tqd->tid", cache.w7, cache.vals7, fv)
    loads *= cache.area[:, None, None]
    flat = np.empty((n_tri, 12))
    flat[:, 0::2] = loads[:, :, 0]
    flat[:, 1::2] = loads[:, :, 1]
    return np.bincount(
        cache.vector_dofs.ravel(), weights=flat.ravel(), minlength=cache.layout.n_total
    )


def dirichlet_values(cache: AssemblyCache, g: Optional[Callable], t: float) -> np.ndarray:
    """Full-length vector holding boundary values at constrained dofs, 0 elsewhere."""
    out = np.zeros(cache.layout.n_total)
    if g is None:
        return out
    xy = fem.scalar_node_coords(cache.mesh)
    bnd = cache.layout.dirichlet_dofs[::2] // 2  # boundary scalar nodes
    vals = np.asarray(g(xy[bnd, 0], xy[bnd, 1], t), dtype=float)
    out[2 * bnd] = vals[:, 0]
    out[2 * bnd + 1] = vals[:, 1]
    return out


def apply_dirichlet(A: sp.csr_matrix, b: np.ndarray, layout: fem.DofLayout, values: np.ndarray):
    """Impose essential conditions by row replacement and column elimination.

    Constrained rows become identity rows with the prescribed value on the
    right-hand side; constrained columns are eliminated into the right-hand
    side so symmetric sub-blocks stay symmetric.
    """
    keep = (~layout.is_dirichlet).astype(float)
    D = sp.diags(keep)
    b_bc = b - A @ values
    b_bc *= keep
    b_bc[layout.dirichlet_dofs] = values[layout.dirichlet_dofs]
    A_bc = D @ A @ D + sp.diags(layout.is_dirichlet.astype(float))
    return A_bc.tocsr(), b_bc


@dataclass
class StepSystemSpec:
    """Everything one implicit velocity step depends on.

    Attributes
    ----------
    nu : float
        Kinematic viscosity.
    k : float
        Step size.
    u_star : ndarray
        Convection linearization field (coefficients).
    u_prev : ndarray
        Velocity at the step's start (coefficients).
    eps : ndarray
        Per-element penalty parameters.
    forcing : callable or None
        Body force ``f(x, y, t) -> (n, 2)``.
    t_next : float
        Time level being solved for.
    boundary : callable or None
        Dirichlet data ``g(x, y, t) -> (n, 2)``; ``None`` means homogeneous.
    """

    nu: float
    k: float
    u_star: np.ndarray
    u_prev: np.ndarray
    eps: np.ndarray
    forcing: Optional[Callable]
    t_next: float
    boundary: Optional[Callable]

    def __post_init__(self):
        if not self.k > 0.0:
            raise ValueError("step size must be positive")
        if not self.nu > 0.0:
            raise ValueError("viscosity must be positive")


def build_step_system(system: StepSystemSpec, cache: AssemblyCache):
    """Assemble the constrained matrix and right-hand side of one step.

    Returns
    -------
    A_bc : csr_matrix
    b_bc : ndarray
    bc : ndarray
        The full-length Dirichlet value vector used for the elimination.
    """
    eps = _check_eps(cache, system.eps)

    # Scalar-level combination (mass/step + viscous + convection), then one
    # kron expansion; the penalty blocks couple components and are scattered
    # on the vector pattern.
    ux, uy = element_coefficients(cache, system.u_star)
    wx = np.einsum("ti,qi->tq", ux, cache.vals)
    wy = np.einsum("ti,qi->tq", uy, cache.vals)
    stream = wx[:, :, None] * cache.gx + wy[:, :, None] * cache.gy
    e1 = np.einsum("q,qi,tqj->tij", cache.wq, cache.vals, stream)
    conv_local = e1 - e1.transpose(0, 2, 1)
    conv_local *= 0.5 * cache.area[:, None, None]

    scalar_local = cache.mass_local / system.k + system.nu * cache.stiff_local + conv_local
    A = sp.kron(cache.pattern_s.assemble(scalar_local), _I2, format="csr")
    A = A + cache.pattern_v.assemble(cache.graddiv_local * (1.0 / eps)[:, None, None])

    b = cache.mass @ system.u_prev / system.k
    if system.forcing is not None:
        b = b + assemble_forcing(cache, system.forcing, system.t_next)

    bc = dirichlet_values(cache, system.boundary, system.t_next)
    A_bc, b_bc = apply_dirichlet(A, b, cache.layout, bc)
    return A_bc, b_bc, bc
