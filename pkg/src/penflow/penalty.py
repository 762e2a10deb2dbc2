"""Element-adaptive control of the divergence penalty parameters.

Each element carries its own penalty parameter eps.  A global mass-
conservation tolerance ``tol`` is distributed over the elements in
proportion to area,

    loctol = 0.5 * tol**2 * area / domain_area,

so the local budgets sum to ``0.5 * tol**2`` exactly.  After every accepted
step the squared element divergence integrals ``est`` are measured and each
eps is scaled by the ratio ``loctol / est`` (then clamped to configured
bounds): elements violating their budget get a stiffer penalty, elements
comfortably inside it get a cheaper one.  Whenever every element satisfies
``est <= loctol``, the global divergence norm is at most ``tol / sqrt(2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .assembly import AssemblyCache
from .fem import p2_gradients
from .mesh import TriMesh, affine_maps

# Elements whose divergence integral is this many orders below their budget
# are treated as exactly divergence-free: the ratio rule would blow up, so
# the penalty jumps straight to the upper bound.
_EST_FLOOR = 1e-14


@dataclass(frozen=True)
class PenaltyConfig:
    """Bounds and target for the per-element penalty parameters."""

    tol: float
    eps_min: float
    eps_max: float

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.eps_min <= self.eps_max:
            raise ValueError("need 0 < eps_min <= eps_max")


@dataclass(frozen=True)
class PenaltyState:
    """Per-element penalty parameters, budgets, and last measured estimates."""

    eps: np.ndarray
    loctol: np.ndarray
    est: np.ndarray
    config: PenaltyConfig


def init_local_tolerances(mesh: TriMesh, tol: float) -> np.ndarray:
    """Area-proportional split of the squared tolerance budget."""
    return 0.5 * tol * tol * mesh.element_area / mesh.domain_area


def init_state(mesh: TriMesh, config: PenaltyConfig) -> PenaltyState:
    """Initial state: eps = 1 clamped into the configured bounds."""
    n = mesh.n_triangles
    eps0 = float(np.clip(1.0, config.eps_min, config.eps_max))
    return PenaltyState(
        eps=np.full(n, eps0),
        loctol=init_local_tolerances(mesh, config.tol),
        est=np.zeros(n),
        config=config,
    )


def divergence_estimator(cache: AssemblyCache, coeffs: np.ndarray) -> np.ndarray:
    """Element integrals of the squared velocity divergence.

    The divergence of a quadratic vector field is linear on each element, so
    the degree-2 rule integrates its square exactly.
    """
    sd = cache.scalar_dofs
    ux = coeffs[2 * sd]
    uy = coeffs[2 * sd + 1]
    div = np.einsum("ti,tqi->tq", ux, cache.gx2) + np.einsum("ti,tqi->tq", uy, cache.gy2)
    return cache.area * np.einsum("q,tq->t", cache.w2, div * div)


def update_epsilon(state: PenaltyState, est: np.ndarray | None = None) -> PenaltyState:
    """Scale each element's eps by loctol / est and clamp to the bounds.

    Parameters
    ----------
    state : PenaltyState
    est : ndarray, optional
        Fresh divergence estimates; defaults to ``state.est``.

    Returns
    -------
    PenaltyState
        New state holding the updated eps and the estimates used.
    """
    if est is None:
        est = state.est
    est = np.asarray(est, dtype=float)
    cfg = state.config
    negligible = est < state.loctol * _EST_FLOOR
    safe_est = np.where(negligible, 1.0, est)
    scaled = np.where(negligible, cfg.eps_max, state.eps * (state.loctol / safe_est))
    eps_new = np.clip(scaled, cfg.eps_min, cfg.eps_max)
    return replace(state, eps=eps_new, est=est)


def global_divergence_norm(est: np.ndarray) -> float:
    """L2 norm of the velocity divergence from the element integrals."""
    return float(np.sqrt(np.sum(est)))


def divergence_l4(cache: AssemblyCache, coeffs: np.ndarray) -> float:
    """Fourth power of the L4 norm of the velocity divergence.

    The divergence is linear per element, so its fourth power has degree 4
    and the degree-5 assembly rule integrates it exactly.  Time drivers
    accumulate ``k * divergence_l4`` into a running sum whose growth is
    controlled by the square of the divergence tolerance.
    """
    sd = cache.scalar_dofs
    ux = coeffs[2 * sd]
    uy = coeffs[2 * sd + 1]
    div = np.einsum("ti,tqi->tq", ux, cache.gx) + np.einsum("ti,tqi->tq", uy, cache.gy)
    div *= div
    return float(np.sum(cache.area * np.einsum("q,tq->t", cache.wq, div * div)))


def budget_violations(state: PenaltyState, est: np.ndarray | None = None) -> int:
    """Number of elements whose divergence integral exceeds its budget."""
    if est is None:
        est = state.est
    return int(np.count_nonzero(est > state.loctol))


def recover_pressure(cache: AssemblyCache, coeffs: np.ndarray, eps: np.ndarray):
    """Element-local pressure - div(u) / eps, shifted to zero global mean.

    Returns
    -------
    values : (n_triangles, 3) ndarray
        Pressure at the three vertices of each element (the pressure is
        linear per element and discontinuous across edges).
    shift : float
        The global mean that was subtracted.
    """
    mesh = cache.mesh
    _, inv_t, _ = affine_maps(mesh)
    vertex_bary = np.eye(3)
    gref = p2_gradients(vertex_bary)
    phys = np.einsum("tab,qib->tqia", inv_t, gref)
    gxv, gyv = phys[..., 0], phys[..., 1]
    sd = cache.scalar_dofs
    ux = coeffs[2 * sd]
    uy = coeffs[2 * sd + 1]
    div = np.einsum("ti,tqi->tq", ux, gxv) + np.einsum("ti,tqi->tq", uy, gyv)
    values = -div / np.asarray(eps, dtype=float)[:, None]
    # Exact integral of a linear function: area times the vertex average.
    shift = float(np.sum(mesh.element_area * values.mean(axis=1)) / mesh.domain_area)
    return values - shift, shift
