"""Benchmark problem definitions: forcing, boundary data, exact solutions.

Each factory returns a :class:`ProblemSpec` bundling the physical data of
one benchmark with its default discretization settings.  All field
callables are vectorized over points: ``f(x, y, t)`` takes coordinate
arrays of shape (n,) and a scalar time and returns an (n, 2) array
(pressures return (n,)).  Forcing terms of manufactured solutions are
derived by hand in closed form; the test suite checks them against a
high-precision finite-difference residual oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .penalty import PenaltyConfig
from .stepper import TimeControlConfig

PI = math.pi


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form velocity, velocity gradient, and pressure."""

    u: Callable  # (x, y, t) -> (n, 2)
    grad_u: Callable  # (x, y, t) -> (n, 2, 2), entry [i, a, b] = d u_a / d x_b
    p: Callable  # (x, y, t) -> (n,)


@dataclass(frozen=True)
class ProblemSpec:
    """One benchmark: physics, boundary data, and default numerics.

    ``boundary=None`` means homogeneous no-slip; ``exact=None`` means no
    closed-form solution is tracked.  ``convection`` selects the
    linearization of the convective term ("lagged" uses the previous
    velocity; "extrapolated" uses the two-level extrapolation), and
    ``use_filter`` enables the second-order time filter.
    """

    name: str
    domain: str
    nu: float
    t_end: float
    dt: float
    forcing: Optional[Callable]
    boundary: Optional[Callable]
    initial: Callable  # (x, y) -> (n, 2)
    exact: Optional[ExactSolution]
    penalty: PenaltyConfig
    time_control: Optional[TimeControlConfig]
    convection: str
    use_filter: bool

    def with_overrides(self, **kw) -> "ProblemSpec":
        """Copy with replaced fields (None values are ignored)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _zero_velocity(x, y):
    return np.zeros((np.asarray(x).shape[0], 2))


# ---------------------------------------------------------------------------
# Decaying-array-of-vortices flow on the unit square
# ---------------------------------------------------------------------------


def _gt_u(x, y, t):
    s = math.sin(t)
    return np.column_stack((-np.cos(x) * np.sin(y) * s, np.sin(x) * np.cos(y) * s))


def _gt_grad(x, y, t):
    s = math.sin(t)
    g = np.empty((np.asarray(x).shape[0], 2, 2))
    g[:, 0, 0] = np.sin(x) * np.sin(y) * s
    g[:, 0, 1] = -np.cos(x) * np.cos(y) * s
    g[:, 1, 0] = np.cos(x) * np.cos(y) * s
    g[:, 1, 1] = -np.sin(x) * np.sin(y) * s
    return g


def _gt_p(x, y, t):
    s = math.sin(t)
    return 0.25 * (np.cos(2.0 * x) + np.cos(2.0 * y)) * s * s


def _gt_forcing(nu: float):
    def f(x, y, t):
        s, c = math.sin(t), math.cos(t)
        cx_sy = np.cos(x) * np.sin(y)
        sx_cy = np.sin(x) * np.cos(y)
        f1 = -cx_sy * c - np.sin(2.0 * x) * s * s - 2.0 * nu * cx_sy * s
        f2 = sx_cy * c - np.sin(2.0 * y) * s * s + 2.0 * nu * sx_cy * s
        return np.column_stack((f1, f2))

    return f


def green_taylor(tol: float = 1e-3, nu: float = 1.0) -> ProblemSpec:
    """Time-modulated vortex array on the unit square with exact solution.

    The default step equals the square of the default mesh size 1/27; the
    boundary carries the (time-dependent) exact trace and the flow starts
    from rest.
    """
    h = 1.0 / 27.0
    return ProblemSpec(
        name="green_taylor",
        domain="unit_square",
        nu=nu,
        t_end=1.0,
        dt=h * h,
        forcing=_gt_forcing(nu),
        boundary=_gt_u,
        initial=_zero_velocity,
        exact=ExactSolution(u=_gt_u, grad_u=_gt_grad, p=_gt_p),
        penalty=PenaltyConfig(tol=tol, eps_min=1e-6, eps_max=1e-1),
        time_control=None,
        convection="lagged",
        use_filter=False,
    )


# ---------------------------------------------------------------------------
# Flow between offset cylinders
# ---------------------------------------------------------------------------


def _offset_forcing(x, y, t):
    ramp = min(t, 1.0)
    shape = 1.0 - x * x - y * y
    return np.column_stack((4.0 * x * ramp * shape, -4.0 * y * ramp * shape))


def offset_cylinders(tol: float = 1e-3) -> ProblemSpec:
    """Driven flow in the annulus between two non-concentric circles.

    Outer circle radius 1 at the origin, inner radius 0.1 centered at
    (0.5, 0); no-slip walls, rest start, rotational body force ramped up
    over the first time unit.
    """
    return ProblemSpec(
        name="offset_cylinders",
        domain="offset_cylinders",
        nu=0.01,
        t_end=16.0,
        dt=0.02,
        forcing=_offset_forcing,
        boundary=None,
        initial=_zero_velocity,
        exact=None,
        penalty=PenaltyConfig(tol=tol, eps_min=1e-10, eps_max=1e-2),
        time_control=None,
        convection="extrapolated",
        use_filter=True,
    )


# ---------------------------------------------------------------------------
# Double-vortex pair on [-1, 1]^2, optionally driven through sharp
# transitions by a nearly-binary amplitude
# ---------------------------------------------------------------------------


def _dv_u(x, y, t):
    s = math.sin(t)
    sx = np.sin(PI * x)
    sy = np.sin(PI * y)
    s2x = np.sin(2.0 * PI * x)
    s2y = np.sin(2.0 * PI * y)
    return np.column_stack((PI * s * s2y * sx * sx, -PI * s * s2x * sy * sy))


def _dv_grad(x, y, t):
    s = math.sin(t)
    sx = np.sin(PI * x)
    sy = np.sin(PI * y)
    s2x = np.sin(2.0 * PI * x)
    s2y = np.sin(2.0 * PI * y)
    c2x = np.cos(2.0 * PI * x)
    c2y = np.cos(2.0 * PI * y)
    g = np.empty((np.asarray(x).shape[0], 2, 2))
    g[:, 0, 0] = PI * PI * s * s2x * s2y
    g[:, 0, 1] = 2.0 * PI * PI * s * sx * sx * c2y
    g[:, 1, 0] = -2.0 * PI * PI * s * c2x * sy * sy
    g[:, 1, 1] = -PI * PI * s * s2x * s2y
    return g


def _dv_p(x, y, t):
    return math.sin(t) * np.cos(PI * x) * np.sin(PI * y)


def _dv_forcing(nu: float):
    """Body force for which the double-vortex pair solves the momentum equation."""

    def h(x, y, t):
        s, c = math.sin(t), math.cos(t)
        sx = np.sin(PI * x)
        cx = np.cos(PI * x)
        sy = np.sin(PI * y)
        cy = np.cos(PI * y)
        s2x = np.sin(2.0 * PI * x)
        c2x = np.cos(2.0 * PI * x)
        s2y = np.sin(2.0 * PI * y)
        c2y = np.cos(2.0 * PI * y)
        pi3 = PI ** 3
        h1 = (
            PI * c * s2y * sx * sx
            + pi3 * s * s * s2x * sx * sx * (s2y * s2y - 2.0 * sy * sy * c2y)
            - PI * s * sx * sy
            - 2.0 * nu * pi3 * s * s2y * (2.0 * c2x - 1.0)
        )
        h2 = (
            -PI * c * s2x * sy * sy
            + pi3 * s * s * s2y * sy * sy * (s2x * s2x - 2.0 * sx * sx * c2x)
            + PI * s * cx * cy
            - 2.0 * nu * pi3 * s * s2x * (1.0 - 2.0 * c2y)
        )
        return np.column_stack((h1, h2))

    return h


def transition_amplitude(t):
    """Nearly-binary modulation: 1 on plateaus, 2 in short wells, steep walls."""
    z = 4.0 + 4.0 * np.sin(3.0 * np.asarray(t, dtype=float))
    return np.exp(-(z ** 10)) + 1.0


def double_vortex(nu: float = 1.0, t_end: float = 1.0, dt: float = 0.1) -> ProblemSpec:
    """Smooth manufactured problem with exact solution (amplitude = 1).

    Counter-rotating vortex pair on [-1, 1]^2 with homogeneous no-slip
    boundary; used for time-accuracy studies.
    """
    return ProblemSpec(
        name="double_vortex",
        domain="square2",
        nu=nu,
        t_end=t_end,
        dt=dt,
        forcing=_dv_forcing(nu),
        boundary=None,
        initial=_zero_velocity,
        exact=ExactSolution(u=_dv_u, grad_u=_dv_grad, p=_dv_p),
        penalty=PenaltyConfig(tol=1e-5, eps_min=1e-8, eps_max=1e-1),
        time_control=None,
        convection="extrapolated",
        use_filter=True,
    )


def sharp_transition(tol: float = 1e-5) -> ProblemSpec:
    """Double-vortex forcing modulated by sharp amplitude transitions.

    The body force is the double-vortex force times a nearly-binary
    amplitude that switches between 1 and 2 through very steep walls; the
    run starts from the constant field (0.1, 0.1) in the interior.
    Defaults configure the adaptive time controller.
    """
    nu = 1.0
    base = _dv_forcing(nu)

    def f(x, y, t):
        return float(transition_amplitude(t)) * base(x, y, t)

    def initial(x, y):
        return np.full((np.asarray(x).shape[0], 2), 0.1)

    return ProblemSpec(
        name="sharp_transition",
        domain="square2",
        nu=nu,
        t_end=6.0,
        dt=0.01,
        forcing=f,
        boundary=None,
        initial=initial,
        exact=None,
        penalty=PenaltyConfig(tol=tol, eps_min=1e-8, eps_max=1e-1),
        time_control=TimeControlConfig(
            t_tol=1e-4,
            t_tol_min=1e-5,
            max_retry=10,
            dt_min=0.001,
            dt_max=0.1,
            dt_init=0.01,
            t_end=6.0,
        ),
        convection="extrapolated",
        use_filter=True,
    )


PROBLEMS = {
    "green_taylor": green_taylor,
    "offset_cylinders": offset_cylinders,
    "sharp_transition": sharp_transition,
    "double_vortex": double_vortex,
}
