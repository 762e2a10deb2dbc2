"""Norm evaluation, rate computation, and CSV round-trip checks."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from penflow import fem, penalty, report
from penflow.report import (RunRecord, convergence_rate, divergence_norm, emit_csv,
                            h1_seminorm_error, l2_error, l2_norm, read_csv,
                            summarize_run, sweep_table, time_integral)


def _interp(cache, func, t=0.0):
    return fem.interpolate_exact(func, cache.mesh, cache.layout, t).coeffs


# ---------------------------------------------------------------------------
# Norms


def test_l2_norm_constant(unit8_cache):
    coeffs = _interp(unit8_cache, lambda x, y, t: np.column_stack(
        (np.ones_like(x), np.ones_like(x))))
    assert l2_norm(unit8_cache, coeffs) == pytest.approx(math.sqrt(2.0), rel=1e-13)


def test_l2_norm_linear(unit8_cache):
    coeffs = _interp(unit8_cache, lambda x, y, t: np.column_stack(
        (x, np.zeros_like(x))))
    # integral of x^2 over the unit square = 1/3
    assert l2_norm(unit8_cache, coeffs) == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-13)


def test_l2_error_against_zero_field(unit8_cache):
    zero = np.zeros(unit8_cache.layout.n_total)
    exact = lambda x, y, t: np.column_stack((3.0 * np.ones_like(x), 4.0 * np.ones_like(x)))
    assert l2_error(unit8_cache, zero, exact, 0.0) == pytest.approx(5.0, rel=1e-13)


def test_l2_error_vanishes_on_reproduced_field(unit8_cache):
    # quadratics are in the velocity space, so their interpolant is exact
    exact = lambda x, y, t: np.column_stack((x * y + t, x * x - 2.0 * y))
    coeffs = _interp(unit8_cache, exact, t=0.7)
    assert l2_error(unit8_cache, coeffs, exact, 0.7) <= 1e-13


def test_h1_error_zero_field(unit8_cache):
    zero = np.zeros(unit8_cache.layout.n_total)

    def grad(x, y, t):
        g = np.zeros((x.shape[0], 2, 2))
        g[:, 0, 0] = y
        g[:, 0, 1] = x
        return g

    # |grad|^2 = x^2 + y^2 integrates to 2/3 on the unit square
    assert h1_seminorm_error(unit8_cache, zero, grad, 0.0) == pytest.approx(
        math.sqrt(2.0 / 3.0), rel=1e-13)


def test_h1_error_vanishes_on_reproduced_field(unit8_cache):
    exact = lambda x, y, t: np.column_stack((x * y, -0.5 * y * y))

    def grad(x, y, t):
        g = np.zeros((x.shape[0], 2, 2))
        g[:, 0, 0] = y
        g[:, 0, 1] = x
        g[:, 1, 1] = -y
        return g

    coeffs = _interp(unit8_cache, exact)
    assert h1_seminorm_error(unit8_cache, coeffs, grad, 0.0) <= 1e-13


def test_divergence_norm_pinned(unit8_cache):
    div_one = _interp(unit8_cache, lambda x, y, t: np.column_stack(
        (x, np.zeros_like(x))))
    assert divergence_norm(unit8_cache, div_one) == pytest.approx(1.0, rel=1e-13)
    div_free = _interp(unit8_cache, lambda x, y, t: np.column_stack((x, -y)))
    assert divergence_norm(unit8_cache, div_free) <= 1e-13


def test_divergence_norm_two_paths_agree(unit8_cache, rng):
    # quadratic-form route (degree-5 rule) vs element-estimator route
    # (degree-2 rule): the integrand is quadratic, so both are exact
    for _ in range(5):
        coeffs = rng.standard_normal(unit8_cache.layout.n_total)
        a = divergence_norm(unit8_cache, coeffs)
        b = penalty.global_divergence_norm(
            penalty.divergence_estimator(unit8_cache, coeffs))
        assert a == pytest.approx(b, rel=1e-12)


# ---------------------------------------------------------------------------
# Rates and time integrals


def test_convergence_rate_pinned():
    # 5.7e-3 at 1e-2 falling to 7.0e-4 at 1e-3 is observed order 0.911
    assert convergence_rate(5.7e-3, 7.0e-4, 1e-2, 1e-3) == pytest.approx(
        0.9107768, abs=1e-6)
    # exactly first order when values track the tolerance
    assert convergence_rate(5e-3, 5e-4, 1e-2, 1e-3) == pytest.approx(1.0, rel=1e-14)


def test_convergence_rate_scale_invariance(rng):
    d1, d2 = 3.4e-2, 6.1e-3
    base = convergence_rate(d1, d2, 1e-2, 1e-3)
    for c in (1e-6, 0.3, 7.0, 1e5):
        assert convergence_rate(c * d1, c * d2, 1e-2, 1e-3) == pytest.approx(
            base, rel=1e-12)
    # direction symmetry: swapping both pairs leaves the rate unchanged
    assert convergence_rate(d2, d1, 1e-3, 1e-2) == pytest.approx(base, rel=1e-14)


def test_time_integral_trapezoid():
    t = np.array([0.0, 1.0, 3.0])
    v = np.array([0.0, 2.0, 4.0])
    assert time_integral(t, v) == pytest.approx(7.0, rel=1e-15)
    assert time_integral(np.array([0.0, 2.0]), np.array([5.0, 5.0])) == 10.0


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip_bit_exact(tmp_path, rng):
    vals = rng.standard_normal(17)
    vals[3] = 1e-300
    vals[5] = -0.0
    vals[8] = 12345.0
    vals[11] = np.nan
    vals[12] = 1.0 / 3.0
    cols = {"t": np.linspace(0.0, 1.0, 17), "value": vals,
            "count": np.arange(17, dtype=int)}
    path = tmp_path / "run.csv"
    emit_csv(path, cols)
    back = read_csv(path)
    assert list(back) == ["t", "value", "count"]
    for name in cols:
        assert np.array_equal(back[name], np.asarray(cols[name], dtype=float),
                              equal_nan=True)


def test_csv_header_and_shape(tmp_path):
    path = tmp_path / "two.csv"
    emit_csv(path, {"a": np.array([1.5, 2.5]), "b": np.array([0.25, -4.0])})
    text = path.read_text(encoding="ascii")
    lines = [ln for ln in text.splitlines() if ln]
    assert lines[0] == "a,b"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# Run summaries


def _fake_series():
    rows = {
        "accepted": np.array([1.0, 0.0, 1.0, 1.0]),
        "div_norm": np.array([3e-3, 9e-2, 2e-3, 1e-3]),
        "eps_avg": np.array([1e-2, 5e-2, 2e-2, 4e-2]),
    }
    return SimpleNamespace(
        rows=rows,
        error_t=np.array([0.0, 0.5, 1.0]),
        error_l2=np.array([0.0, 2e-4, 1.5e-4]),
        error_h1=np.array([0.0, 4e-3, 2e-3]),
    )


def test_summarize_run_uses_accepted_rows_only():
    rec = summarize_run(_fake_series(), tol=1e-3)
    assert rec.tol == 1e-3
    assert rec.div_norm_final == 1e-3          # last accepted row
    assert rec.eps_avg_final == 4e-2
    assert rec.eps_avg_time == pytest.approx((1e-2 + 2e-2 + 4e-2) / 3.0, rel=1e-15)
    assert rec.max_l2_err == 2e-4
    assert rec.int_h1_err == pytest.approx(0.5 * (0 + 4e-3) / 2 + 0.5 * (4e-3 + 2e-3) / 2,
                                           rel=1e-14)
    assert rec.n_steps == 3


def test_summarize_run_without_error_series():
    s = _fake_series()
    s.error_t = np.array([])
    s.error_l2 = np.array([])
    s.error_h1 = np.array([])
    rec = summarize_run(s, tol=1e-2)
    assert math.isnan(rec.max_l2_err) and math.isnan(rec.int_h1_err)
    assert rec.div_norm_final == 1e-3


def test_sweep_table_rates():
    recs = [
        RunRecord(tol=1e-2, div_norm_final=5.7e-3, eps_avg_final=1e-3,
                  eps_avg_time=1e-3, max_l2_err=1e-3, int_h1_err=1e-2, n_steps=10),
        RunRecord(tol=1e-3, div_norm_final=7.0e-4, eps_avg_final=1e-4,
                  eps_avg_time=1e-4, max_l2_err=2e-4, int_h1_err=5e-3, n_steps=10),
        RunRecord(tol=1e-4, div_norm_final=7.2e-5, eps_avg_final=1e-5,
                  eps_avg_time=1e-5, max_l2_err=1e-4, int_h1_err=2e-3, n_steps=10),
    ]
    tab = sweep_table(recs)
    assert tab["rate"][0] == "--"
    assert float(tab["rate"][1]) == pytest.approx(0.9107768, abs=1e-6)
    assert float(tab["rate"][2]) == pytest.approx(math.log10(7.0e-4 / 7.2e-5), rel=1e-12)
    assert np.array_equal(tab["tol"], np.array([1e-2, 1e-3, 1e-4]))
    assert np.array_equal(tab["div_norm"], np.array([5.7e-3, 7.0e-4, 7.2e-5]))
    assert np.array_equal(tab["n_steps"], np.array([10, 10, 10]))
