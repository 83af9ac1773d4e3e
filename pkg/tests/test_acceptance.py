"""Acceptance gate: one PASS/FAIL line per criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``.  The simulation criteria
take several minutes each on one core.
"""
import math

import numpy as np
import pytest

from glfm_jic.diagnostics import error_scaling_study, hadamard_audit
from glfm_jic.estimator import (
    FitConfig,
    column_gradient,
    column_objective,
    fit_jml,
    project_factor,
    project_item,
    row_gradient,
    row_objective,
    update_row,
)
from glfm_jic.model_core import GAUSSIAN, LOGISTIC, POISSON, ObservationSet, ParameterSet
from glfm_jic.selection import penalty
from glfm_jic.simulation import run_study, preset_setting

SEED = 2021
REPS = 20
FAMILIES = [LOGISTIC, POISSON, GAUSSIAN]


def draw(family, m, rng):
    if family is LOGISTIC:
        return (rng.random(m.shape) < 1 / (1 + np.exp(-m))).astype(float)
    if family is POISSON:
        return rng.poisson(np.exp(m)).astype(float)
    return m + rng.normal(size=m.shape)


def study(number):
    return run_study(preset_setting(number, replications=REPS, seed=SEED))


def test_penalty_golden_values(acceptance):
    got = [round(penalty(65096, 824, 79, K)) for K in range(1, 6)]
    ok = got == [3600, 7201, 10801, 14402, 18002]
    acceptance("penalty arithmetic 824x79, n=65096", ok, f"rounded penalties {got}")
    assert ok


@pytest.mark.slow
def test_logistic_complete_selection(acceptance):
    s = study(1)
    rate = s.correct / REPS
    ok = rate >= 0.95
    acceptance("setting 1 logistic complete", ok,
               f"correct {s.correct}/{REPS} (need >= 95%), under {s.under}, over {s.over}, "
               f"failed {s.failed}")
    assert ok


@pytest.mark.slow
def test_poisson_uniform_missing_selection(acceptance):
    s = study(8)
    ok = s.correct / REPS >= 0.90 and s.over <= 1
    acceptance("setting 8 poisson uniform-missing", ok,
               f"correct {s.correct}/{REPS} (need >= 90%), over {s.over} (need <= 1), "
               f"under {s.under}, failed {s.failed}")
    assert ok


@pytest.mark.slow
def test_nonuniform_missing_direction(acceptance):
    uniform, nonuniform = study(2), study(3)
    ok = nonuniform.under > uniform.under and nonuniform.over / REPS <= 0.05
    acceptance("setting 3 vs 2 direction", ok,
               f"under {nonuniform.under} vs {uniform.under} (need strictly more), "
               f"over {nonuniform.over}/{REPS} (need <= 5%); correct {nonuniform.correct} vs "
               f"{uniform.correct}")
    assert ok


def test_monotone_ascent(acceptance):
    rng = np.random.default_rng(SEED)
    passed = 0
    worst = 0.0
    for k in range(50):
        family = FAMILIES[k % 3]
        N, J, K = int(rng.integers(20, 80)), int(rng.integers(10, 40)), int(rng.integers(1, 4))
        F = project_factor(rng.normal(scale=0.7, size=(N, K)), 3.0)
        B = project_item(rng.normal(scale=0.7, size=(J, K + 1)), 3.0)
        Y = draw(family, B[:, 0] + F @ B[:, 1:].T, rng)
        Y[rng.random(Y.shape) < rng.uniform(0, 0.5)] = np.nan
        obs = ObservationSet.from_dense(Y)
        fit = fit_jml(obs, K, family, 4.0, FitConfig(rel_tol=1e-10, max_sweeps=40, seed=k))
        trace = np.array(fit.trace)
        drops = (trace[:-1] - trace[1:]) / np.abs(trace[:-1])
        worst = max(worst, float(drops.max(initial=0.0)))
        passed += bool(np.all(drops <= 1e-8))
    ok = passed == 50
    acceptance("monotone ascent", ok,
               f"{passed}/50 traces non-decreasing within 1e-8 relative "
               f"(largest relative drop {worst:.2e})")
    assert ok


def test_row_update_grid_oracle(acceptance):
    rng = np.random.default_rng(SEED)
    C = 4.0
    grid = np.arange(-math.sqrt(C * C - 1), math.sqrt(C * C - 1) + 1e-12, 1e-4)
    worst = 0.0
    for _ in range(100):
        J = int(rng.integers(5, 40))
        B = project_item(rng.normal(scale=0.8, size=(J, 2)), C)
        A, d = B[:, 1:], B[:, 0]
        cols = np.sort(rng.choice(J, size=int(rng.integers(1, J + 1)), replace=False))
        f_true = rng.uniform(-3, 3)
        y = draw(LOGISTIC, A[cols, 0] * f_true + d[cols], rng)
        m = grid[:, None] * A[cols, 0][None, :] + d[cols][None, :]
        best = grid[np.argmax(np.sum(y * m - np.logaddexp(0, m), axis=1))]
        start = np.array([rng.uniform(-1, 1)])
        out = update_row(start, A, d, cols, y, LOGISTIC, C, FitConfig(inner_max_iter=50))
        worst = max(worst, abs(out[0] - best))
    ok = worst <= 1e-3
    acceptance("row update vs 1e-4 grid, K=1 logistic", ok,
               f"max |argmax difference| {worst:.2e} over 100 instances (need <= 1e-3)")
    assert ok


def _fd(fun, x, h=1e-6):
    return np.array([(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def test_block_gradients(acceptance):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for family in FAMILIES:
        for _ in range(30):
            K, J, N = 3, 25, 25
            B = project_item(rng.normal(scale=0.7, size=(J, K + 1)), 4.0)
            A, d = B[:, 1:], B[:, 0]
            cols = np.sort(rng.choice(J, size=18, replace=False))
            f = rng.uniform(-1, 1, size=K)
            y = draw(family, A[cols] @ f + d[cols], rng)
            g = row_gradient(f, A, d, cols, y, family)
            fd = _fd(lambda v: row_objective(v, A, d, cols, y, family), f)
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))

            F = rng.uniform(-1, 1, size=(N, K))
            rows = np.sort(rng.choice(N, size=18, replace=False))
            b = rng.normal(scale=0.7, size=K + 1)
            y = draw(family, b[0] + F[rows] @ b[1:], rng)
            g = column_gradient(b, F, rows, y, family)
            fd = _fd(lambda v: column_objective(v, F, rows, y, family), b)
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    ok = worst <= 1e-5
    acceptance("block gradients vs central differences", ok,
               f"max relative error {worst:.2e} over 30 row and 30 column points per family "
               f"(need <= 1e-5)")
    assert ok


@pytest.mark.slow
def test_error_scaling(acceptance):
    table = error_scaling_study("gaussian", 3, [(400, 40), (800, 80)], reps=10, seed=SEED)
    ratio = table[1]["mean_error"] / table[0]["mean_error"]
    ok = 0.55 <= ratio <= 0.90
    acceptance("error scaling (400,40) -> (800,80) gaussian", ok,
               f"mean error {table[0]['mean_error']:.4f} -> {table[1]['mean_error']:.4f}, "
               f"ratio {ratio:.3f} (need [0.55, 0.90], rate ratio 0.707)")
    assert ok


def test_hadamard_audit(acceptance):
    out = hadamard_audit(trials=1000, N=20, J=20, r=3, r_star=3, C=2.0, seed=SEED)
    ok = out["violations"] == 0
    acceptance("hadamard nuclear-norm audit", ok,
               f"{out['violations']} violations in {out['trials']} pairs "
               f"(largest lhs/rhs {out['max_ratio']:.3f})")
    assert ok
