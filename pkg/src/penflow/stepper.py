"""Time stepping: implicit steps, the second-order filter, and step control.

The base scheme is implicit Euler with skew-symmetrized convection and the
element-adaptive divergence penalty.  From the second step on, an optional
variable-step filter combines the new solve with the two previous levels,
lifting the accuracy to second order; half the filter correction is also a
local truncation error estimate that drives the adaptive step controller:

* estimate below the dead band  -> accept and grow the step,
* estimate inside the dead band -> accept and keep the step,
* estimate above the tolerance  -> reject, shrink, and re-solve from the
  same state, accepting unconditionally once the retry budget or the
  minimum step is exhausted.

Penalty parameters are updated exactly once per accepted step.  The
constant-step driver shares the same machinery with the controller
disabled (the error estimate is still recorded when the filter runs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import penalty as pen
from . import report
from .assembly import AssemblyCache, StepSystemSpec, build_cache, build_step_system, dirichlet_values
from .fem import VelocityField, dof_layout, interpolate_exact
from .mesh import TriMesh
from .sparse import solve


class SolverError(RuntimeError):
    """Raised when a linear solve fails; carries the offending step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"linear solve failed at step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TimeControlConfig:
    """Adaptive step controller settings.

    ``t_tol`` is the truncation-error tolerance, ``t_tol_min`` the lower
    edge of the dead band, and steps are confined to
    ``[dt_min, dt_max]``; ``dt_init`` is the starting step and ``t_end``
    the final time.
    """

    t_tol: float
    t_tol_min: float
    max_retry: int
    dt_min: float
    dt_max: float
    dt_init: float
    t_end: float

    def __post_init__(self):
        if not 0.0 < self.t_tol_min < self.t_tol:
            raise ValueError("need 0 < t_tol_min < t_tol")
        if not 0.0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.max_retry < 1:
            raise ValueError("max_retry must be at least 1")
        if not self.t_end > 0.0:
            raise ValueError("t_end must be positive")


@dataclass(frozen=True)
class StepDecision:
    """Controller verdict: accept (with the next step size) or retry."""

    accepted: bool
    k_next: float
    forced: bool


@dataclass
class StepperState:
    """Rolling state of the march: two velocity levels and step history."""

    u_curr: VelocityField
    u_prev: Optional[VelocityField]
    k_last: float  # last accepted step
    k_next: float  # proposed size of the upcoming step
    step: int


def extrapolate(u_curr: np.ndarray, u_prev: np.ndarray, k_new: float, k_last: float) -> np.ndarray:
    """Two-level linear extrapolation to the end of the upcoming step."""
    tau = k_new / k_last
    return (1.0 + tau) * u_curr - tau * u_prev


def filter_alpha(k_last: float, k_new: float) -> float:
    """Filter strength for the step ratio tau = k_new / k_last."""
    tau = k_new / k_last
    return tau * (1.0 + tau) / (1.0 + 2.0 * tau)


def time_filter(u_raw: np.ndarray, u_curr: np.ndarray, u_prev: np.ndarray,
                k_last: float, k_new: float):
    """Apply the variable-step second-difference filter to a new solve.

    Returns the filtered coefficients, the weighted second difference d2,
    and the filter strength alpha; the filtered field equals
    ``u_raw - (alpha / 2) * d2``.
    """
    denom = k_last + k_new
    d2 = (2.0 * k_last / denom) * u_raw - 2.0 * u_curr + (2.0 * k_new / denom) * u_prev
    alpha = filter_alpha(k_last, k_new)
    return u_raw - 0.5 * alpha * d2, d2, alpha


def estimate_lte(d2: np.ndarray, alpha: float, mass) -> float:
    """Truncation-error estimate: half the filter correction in the L2 norm."""
    return 0.5 * alpha * math.sqrt(max(float(d2 @ (mass @ d2)), 0.0))


def propose_step(t_est: float, k_last: float, k_curr: float, retries: int,
                 cfg: TimeControlConfig) -> StepDecision:
    """Decide acceptance and the next step size from the error estimate.

    ``k_last`` is the last accepted step, ``k_curr`` the size of the step
    just attempted, and ``retries`` how many times it was already rejected.
    """
    if t_est > cfg.t_tol:
        at_floor = k_curr <= cfg.dt_min * (1.0 + 1e-12)
        if retries >= cfg.max_retry or at_floor:
            k_next = min(max(k_curr, cfg.dt_min), cfg.dt_max)
            return StepDecision(accepted=True, k_next=k_next, forced=True)
        k_retry = max(0.9 * k_last * math.sqrt(cfg.t_tol / t_est), 0.5 * k_curr)
        return StepDecision(accepted=False, k_next=max(k_retry, cfg.dt_min), forced=False)
    if t_est < cfg.t_tol_min:
        factor = math.sqrt(cfg.t_tol / t_est) if t_est > 0.0 else math.inf
        k_grow = max(min(0.9 * k_curr * factor, 2.0 * k_curr), 0.5 * k_curr)
        return StepDecision(accepted=True, k_next=min(max(k_grow, cfg.dt_min), cfg.dt_max), forced=False)
    return StepDecision(accepted=True, k_next=min(max(k_curr, cfg.dt_min), cfg.dt_max), forced=False)


_COLUMNS = (
    "step", "t", "k", "t_est", "retries", "accepted", "forced", "div_norm",
    "eps_min", "eps_max", "eps_avg", "violations", "u_l2", "ut_l2",
    "l2_err", "h1_err", "all_within", "energy_prev", "energy_new",
    "grad_sq", "penalty_q", "solve_res", "div_l4", "div_l4_sum",
)


@dataclass
class RunSeries:
    """Complete record of one run: per-attempt rows plus final state.

    ``rows`` maps column names to arrays with one entry per solve attempt
    (rejected attempts carry ``accepted = 0``).  Error columns are NaN when
    no exact solution is tracked.  ``error_t``/``error_l2``/``error_h1``
    sample the errors on the accepted time grid including t = 0.
    """

    rows: dict
    error_t: np.ndarray
    error_l2: np.ndarray
    error_h1: np.ndarray
    final: VelocityField
    state: pen.PenaltyState
    n_rejections: int
    n_forced: int

    def col(self, name: str) -> np.ndarray:
        return self.rows[name]

    def accepted(self, name: str) -> np.ndarray:
        """Column restricted to accepted steps."""
        return self.rows[name][self.rows["accepted"] == 1.0]


def _land_on(t: float, k: float, t_end: float, guard: float) -> float:
    """Clip or stretch a step so the march lands on the final time exactly."""
    if t + k >= t_end - guard:
        return t_end - t
    return k


def run_constant_step(problem, mesh: TriMesh, *, tol: Optional[float] = None,
                      dt: Optional[float] = None, t_end: Optional[float] = None,
                      nu: Optional[float] = None, convection: Optional[str] = None,
                      use_filter: Optional[bool] = None, adapt_eps: bool = True,
                      eps_fixed: Optional[float] = None,
                      u0: Optional[VelocityField] = None,
                      cache: Optional[AssemblyCache] = None) -> RunSeries:
    """March the problem to its final time with a fixed step size."""
    return _run(problem, mesh, time_control=None, tol=tol, dt=dt, t_end=t_end,
                nu=nu, convection=convection, use_filter=use_filter,
                adapt_eps=adapt_eps, eps_fixed=eps_fixed, u0=u0, cache=cache)


def run_adaptive_step(problem, mesh: TriMesh, *, time_control: Optional[TimeControlConfig] = None,
                      tol: Optional[float] = None, nu: Optional[float] = None,
                      convection: Optional[str] = None, use_filter: Optional[bool] = None,
                      adapt_eps: bool = True, eps_fixed: Optional[float] = None,
                      u0: Optional[VelocityField] = None,
                      cache: Optional[AssemblyCache] = None) -> RunSeries:
    """March with the adaptive step controller (requires the time filter)."""
    tc = time_control if time_control is not None else problem.time_control
    if tc is None:
        raise ValueError("adaptive stepping needs a TimeControlConfig")
    if use_filter is False:
        raise ValueError("the step controller requires the time filter")
    return _run(problem, mesh, time_control=tc, tol=tol, dt=tc.dt_init,
                t_end=tc.t_end, nu=nu, convection=convection, use_filter=True,
                adapt_eps=adapt_eps, eps_fixed=eps_fixed, u0=u0, cache=cache)


def _run(problem, mesh, *, time_control, tol, dt, t_end, nu, convection,
         use_filter, adapt_eps, eps_fixed, u0, cache) -> RunSeries:
    if cache is None:
        cache = build_cache(mesh)
    layout = cache.layout
    nu = problem.nu if nu is None else nu
    dt = problem.dt if dt is None else dt
    t_end = problem.t_end if t_end is None else t_end
    convection = problem.convection if convection is None else convection
    use_filter = problem.use_filter if use_filter is None else use_filter
    if convection not in ("lagged", "extrapolated"):
        raise ValueError(f"unknown convection mode {convection!r}")

    pcfg = problem.penalty if tol is None else pen.PenaltyConfig(
        tol=tol, eps_min=problem.penalty.eps_min, eps_max=problem.penalty.eps_max)
    state = pen.init_state(mesh, pcfg)
    if eps_fixed is not None:
        if not eps_fixed > 0.0:
            raise ValueError("fixed penalty parameter must be positive")
        state = pen.PenaltyState(
            eps=np.full(mesh.n_triangles, float(eps_fixed)),
            loctol=state.loctol, est=state.est, config=state.config)
        adapt_eps = False

    mass = cache.mass
    stiff = cache.stiffness

    if u0 is None:
        u0 = interpolate_exact(lambda x, y, t: problem.initial(x, y), mesh, layout, 0.0)
    coeffs0 = u0.coeffs.copy()
    bc0 = dirichlet_values(cache, problem.boundary, 0.0)
    coeffs0[layout.dirichlet_dofs] = bc0[layout.dirichlet_dofs]
    u_curr = VelocityField(coeffs0, 0.0)
    u_prev: Optional[VelocityField] = None

    rows = {c: [] for c in _COLUMNS}
    err_t, err_l2, err_h1 = [], [], []

    def record_error(coeffs, t):
        if problem.exact is None:
            return math.nan, math.nan
        e2 = report.l2_error(cache, coeffs, problem.exact.u, t)
        eh = report.h1_seminorm_error(cache, coeffs, problem.exact.grad_u, t)
        err_t.append(t)
        err_l2.append(e2)
        err_h1.append(eh)
        return e2, eh

    record_error(u_curr.coeffs, 0.0)

    k_last = dt  # last accepted step (defines extrapolation/filter ratios)
    k_next = dt
    t = 0.0
    step = 0
    n_rejections = 0
    n_forced = 0
    div_l4_sum = 0.0
    eps_guard = 1e-10 * max(t_end, 1.0)

    while t_end - t > eps_guard:
        k_attempt = _land_on(t, k_next, t_end, eps_guard)
        retries = 0
        while True:
            t_next = t + k_attempt
            if convection == "extrapolated" and u_prev is not None:
                u_star = extrapolate(u_curr.coeffs, u_prev.coeffs, k_attempt, k_last)
            else:
                u_star = u_curr.coeffs
            system = StepSystemSpec(nu=nu, k=k_attempt, u_star=u_star,
                                    u_prev=u_curr.coeffs, eps=state.eps,
                                    forcing=problem.forcing, t_next=t_next,
                                    boundary=problem.boundary)
            A, b, bc = build_step_system(system, cache)
            x, rep = solve(A, b)
            # A degraded residual (rep.success False with finite x) is expected
            # when 1/eps is large: the residual of ANY double-precision vector
            # is bounded below by roundoff times the matrix scale.  It is
            # recorded in the series; only a genuine breakdown aborts.
            if x is None:
                raise SolverError(step, "factorization failed (singular matrix)")
            if not np.all(np.isfinite(x)):
                raise SolverError(step, "solution contains non-finite entries")
            x[layout.dirichlet_dofs] = bc[layout.dirichlet_dofs]

            if use_filter and u_prev is not None:
                u_new, d2, alpha = time_filter(x, u_curr.coeffs, u_prev.coeffs, k_last, k_attempt)
                t_est = estimate_lte(d2, alpha, mass)
            else:
                u_new, t_est = x, math.nan

            if time_control is not None and math.isfinite(t_est):
                decision = propose_step(t_est, k_last, k_attempt, retries, time_control)
            else:
                decision = StepDecision(accepted=True, k_next=k_next, forced=False)

            est = pen.divergence_estimator(cache, u_new)
            div_norm = pen.global_divergence_norm(est)
            all_within = bool(np.all(est <= state.loctol))
            div_l4 = pen.divergence_l4(cache, u_new)
            du = u_new - u_curr.coeffs
            row = {
                "step": step, "t": t_next, "k": k_attempt, "t_est": t_est,
                "retries": retries, "accepted": int(decision.accepted),
                "forced": int(decision.forced), "div_norm": div_norm,
                "eps_min": float(state.eps.min()), "eps_max": float(state.eps.max()),
                "eps_avg": float(state.eps.mean()),
                "violations": pen.budget_violations(state, est),
                "u_l2": math.sqrt(max(float(u_new @ (mass @ u_new)), 0.0)),
                "ut_l2": math.sqrt(max(float(du @ (mass @ du)), 0.0)) / k_attempt,
                "all_within": int(all_within),
                "energy_prev": float(u_curr.coeffs @ (mass @ u_curr.coeffs)),
                "energy_new": float(u_new @ (mass @ u_new)),
                "grad_sq": float(u_new @ (stiff @ u_new)),
                "penalty_q": float(np.sum(est / state.eps)),
                "solve_res": rep.rel_residual,
                "div_l4": div_l4,
                "div_l4_sum": div_l4_sum + k_attempt * div_l4,
            }

            if decision.accepted:
                div_l4_sum += k_attempt * div_l4
                if decision.forced:
                    n_forced += 1
                # Whenever every element meets its budget, the global
                # divergence norm is inside the tolerance budget.
                if all_within:
                    assert div_norm ** 2 <= 0.5 * pcfg.tol ** 2 * (1.0 + 1e-12)
                l2e, h1e = record_error(u_new, t_next)
                row["l2_err"], row["h1_err"] = l2e, h1e
                for c in _COLUMNS:
                    rows[c].append(row[c])
                if adapt_eps:
                    state = pen.update_epsilon(state, est)
                else:
                    state = pen.PenaltyState(eps=state.eps, loctol=state.loctol,
                                             est=est, config=state.config)
                u_prev = u_curr
                u_curr = VelocityField(u_new, t_next)
                k_last = k_attempt
                k_next = decision.k_next
                t = t_next
                step += 1
                break

            row["l2_err"], row["h1_err"] = math.nan, math.nan
            for c in _COLUMNS:
                rows[c].append(row[c])
            n_rejections += 1
            retries += 1
            k_attempt = _land_on(t, decision.k_next, t_end, eps_guard)

    return RunSeries(
        rows={c: np.asarray(v, dtype=float) for c, v in rows.items()},
        error_t=np.asarray(err_t), error_l2=np.asarray(err_l2), error_h1=np.asarray(err_h1),
        final=u_curr, state=state, n_rejections=n_rejections, n_forced=n_forced,
    )
