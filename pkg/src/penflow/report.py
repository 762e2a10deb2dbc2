"""Error norms, convergence rates, and CSV reporting.

Continuous norms are evaluated with the degree-7 quadrature rule.  CSV
files are RFC-4180 with a header row; floats are written in shortest
round-trip form so re-reading reproduces them bit-exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .assembly import AssemblyCache, quadrature_points


def _field_at_quad(cache: AssemblyCache, coeffs: np.ndarray):
    """Velocity components at the degree-7 points; each (n_tri, n_q)."""
    sd = cache.scalar_dofs
    ux = coeffs[2 * sd]
    uy = coeffs[2 * sd + 1]
    return np.einsum("ti,qi->tq", ux, cache.vals7), np.einsum("ti,qi->tq", uy, cache.vals7)


def l2_error(cache: AssemblyCache, coeffs: np.ndarray, exact_u, t: float) -> float:
    """L2 norm of the difference between the field and ``exact_u`` at time t."""
    xq = quadrature_points(cache)
    n_tri, n_q = xq.shape[0], xq.shape[1]
    ue = np.asarray(exact_u(xq[..., 0].ravel(), xq[..., 1].ravel(), t)).reshape(n_tri, n_q, 2)
    uhx, uhy = _field_at_quad(cache, coeffs)
    diff2 = (ue[..., 0] - uhx) ** 2 + (ue[..., 1] - uhy) ** 2
    total = float(np.sum(cache.area * np.einsum("q,tq->t", cache.w7, diff2)))
    return math.sqrt(max(total, 0.0))


def l2_norm(cache: AssemblyCache, coeffs: np.ndarray) -> float:
    """Continuous L2 norm of a velocity field (degree-7 rule)."""
    uhx, uhy = _field_at_quad(cache, coeffs)
    total = float(np.sum(cache.area * np.einsum("q,tq->t", cache.w7, uhx ** 2 + uhy ** 2)))
    return math.sqrt(max(total, 0.0))


def h1_seminorm_error(cache: AssemblyCache, coeffs: np.ndarray, exact_grad, t: float) -> float:
    """H1 seminorm (Frobenius norm of the gradient defect) at time t."""
    xq = quadrature_points(cache)
    n_tri, n_q = xq.shape[0], xq.shape[1]
    ge = np.asarray(exact_grad(xq[..., 0].ravel(), xq[..., 1].ravel(), t)).reshape(n_tri, n_q, 2, 2)
    sd = cache.scalar_dofs
    ux = coeffs[2 * sd]
    uy = coeffs[2 * sd + 1]
    gh = np.empty((n_tri, n_q, 2, 2))
    gh[..., 0, 0] = np.einsum("ti,tqi->tq", ux, cache.gx7)
    gh[..., 0, 1] = np.einsum("ti,tqi->tq", ux, cache.gy7)
    gh[..., 1, 0] = np.einsum("ti,tqi->tq", uy, cache.gx7)
    gh[..., 1, 1] = np.einsum("ti,tqi->tq", uy, cache.gy7)
    diff2 = np.sum((ge - gh) ** 2, axis=(2, 3))
    total = float(np.sum(cache.area * np.einsum("q,tq->t", cache.w7, diff2)))
    return math.sqrt(max(total, 0.0))


def divergence_norm(cache: AssemblyCache, coeffs: np.ndarray) -> float:
    """L2 norm of the velocity divergence via the unit-penalty quadratic form.

    Independent of the element estimator path: this assembles the penalty
    matrix with every parameter equal to one and evaluates its quadratic
    form (degree-5 rule), whereas the estimator integrates element by
    element with the degree-2 rule.
    """
    ones = np.ones(cache.mesh.n_triangles)
    G = cache.pattern_v.assemble(cache.graddiv_local * ones[:, None, None])
    return math.sqrt(max(float(coeffs @ (G @ coeffs)), 0.0))


def convergence_rate(d1: float, d2: float, tol1: float, tol2: float) -> float:
    """Observed order: log of the value ratio over log of the tolerance ratio."""
    return math.log(d1 / d2) / math.log(tol1 / tol2)


def time_integral(t: np.ndarray, values: np.ndarray) -> float:
    """Trapezoid rule on a (possibly nonuniform) time grid."""
    return float(np.trapezoid(values, t))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _format(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    xf = float(x)
    if xf.is_integer() and abs(xf) < 1e15 and not isinstance(x, float):
        return str(int(xf))
    return repr(xf)


def emit_csv(path, columns: dict) -> None:
    """Write named columns as RFC-4180 CSV with a header row."""
    names = list(columns.keys())
    arrays = [np.asarray(columns[n]) for n in names]
    n_rows = arrays[0].shape[0] if arrays else 0
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(n_rows):
            writer.writerow([_format(a[i]) for a in arrays])


def read_csv(path) -> dict:
    """Read a CSV written by :func:`emit_csv` back into float columns."""
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        cols = {n: [] for n in names}
        for row in reader:
            for n, v in zip(names, row):
                cols[n].append(float(v))
    return {n: np.asarray(v) for n, v in cols.items()}


@dataclass(frozen=True)
class RunRecord:
    """Summary of one run for tolerance-sweep tables.

    ``eps_avg_final`` is the spatial mean of the penalty parameters used in
    the final step; ``eps_avg_time`` additionally averages the spatial mean
    over all accepted steps.  ``max_l2_err`` includes the initial time.
    """

    tol: float
    div_norm_final: float
    eps_avg_final: float
    eps_avg_time: float
    max_l2_err: float
    int_h1_err: float
    n_steps: int


def summarize_run(series, tol: float) -> RunRecord:
    """Condense a :class:`RunSeries` into the sweep-table quantities."""
    acc = series.rows["accepted"] == 1.0
    div_final = float(series.rows["div_norm"][acc][-1])
    eps_avg = series.rows["eps_avg"][acc]
    if series.error_t.size:
        max_l2 = float(series.error_l2.max())
        int_h1 = time_integral(series.error_t, series.error_h1)
    else:
        max_l2 = math.nan
        int_h1 = math.nan
    return RunRecord(
        tol=tol,
        div_norm_final=div_final,
        eps_avg_final=float(eps_avg[-1]),
        eps_avg_time=float(eps_avg.mean()),
        max_l2_err=max_l2,
        int_h1_err=int_h1,
        n_steps=int(np.count_nonzero(acc)),
    )


def sweep_table(records) -> dict:
    """Columns of a tolerance-sweep summary; first rate entry is ``--``."""
    tols = [r.tol for r in records]
    divs = [r.div_norm_final for r in records]
    rates = ["--"]
    for i in range(1, len(records)):
        rates.append(repr(convergence_rate(divs[i - 1], divs[i], tols[i - 1], tols[i])))
    return {
        "tol": np.asarray(tols),
        "div_norm": np.asarray(divs),
        "rate": rates,
        "eps_avg_final": np.asarray([r.eps_avg_final for r in records]),
        "eps_avg_time": np.asarray([r.eps_avg_time for r in records]),
        "max_l2_err": np.asarray([r.max_l2_err for r in records]),
        "int_h1_err": np.asarray([r.int_h1_err for r in records]),
        "n_steps": np.asarray([r.n_steps for r in records]),
    }
