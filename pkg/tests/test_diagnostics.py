import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glfm_jic.diagnostics import (
    error_report,
    error_scaling_study,
    hadamard_audit,
    hadamard_nuclear_check,
    random_low_rank_pair,
    rate_bound,
    scaled_frobenius_error,
    singular_values,
)
from glfm_jic.estimator import fit_jml
from glfm_jic.model_core import ObservationSet
from glfm_jic.simulation import SimSetting, generate_truth


class TestScaledFrobenius:
    def test_identical(self):
        M = np.arange(12.0).reshape(3, 4)
        assert scaled_frobenius_error(M, M) == 0.0

    def test_unit_offset(self):
        assert scaled_frobenius_error(np.ones((10, 10)), np.zeros((10, 10))) == 1.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(7, 5)), rng.normal(size=(7, 5))
        total = 0.0
        for i in range(7):
            for j in range(5):
                total += (A[i, j] - B[i, j]) ** 2
        assert scaled_frobenius_error(A, B) == pytest.approx(math.sqrt(total / 35), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            scaled_frobenius_error(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSingularValues:
    def test_identity(self):
        assert np.allclose(singular_values(np.eye(3)), [1, 1, 1])

    def test_diagonal(self):
        assert np.allclose(singular_values(np.diag([1.0, 3.0, 2.0])), [3, 2, 1])

    def test_generated_truth_rank(self):
        setting = SimSetting(N=200, J=50, K_star=4)
        _, M = generate_truth(setting, np.random.default_rng(1))
        s = singular_values(M)
        assert s[5] <= 1e-8 * s[0]
        assert s[4] > 1e-3 * s[0]

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_descending_nonnegative(self, N, J, seed):
        s = singular_values(np.random.default_rng(seed).normal(size=(N, J)))
        assert s.size == min(N, J)
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)


class TestRate:
    def test_doubling_shrinks_by_root_two(self):
        ratio = rate_bound(3, 800, 80, 800 * 80) / rate_bound(3, 400, 40, 400 * 40)
        assert ratio == pytest.approx(1 / math.sqrt(2), rel=1e-12)

    def test_halving_p_grows_by_root_two(self):
        ratio = rate_bound(3, 400, 40, 0.5 * 400 * 40) / rate_bound(3, 400, 40, 400 * 40)
        assert ratio == pytest.approx(math.sqrt(2), rel=1e-12)

    def test_report(self):
        rng = np.random.default_rng(2)
        M = rng.normal(size=(6, 4))
        rep = error_report(M, n=20, K=2, M_star=M + 1)
        assert rep.scaled_frobenius == pytest.approx(1.0)
        assert rep.n_star_proxy == 20.0
        assert rep.rate_bound_value == pytest.approx(math.sqrt(2 * 6 / 20))
        assert list(rep.singular_values) == sorted(rep.singular_values, reverse=True)
        d = rep.to_dict()
        assert isinstance(d["singular_values"], list) and d["N"] == 6

    def test_report_without_truth(self):
        rep = error_report(np.eye(3), n=9, K=1)
        assert rep.scaled_frobenius is None


class TestScalingStudy:
    def test_doubling(self):
        table = error_scaling_study("gaussian", 3, [(400, 40), (800, 80)], reps=4, seed=7)
        ratio = table[1]["mean_error"] / table[0]["mean_error"]
        assert 0.55 <= ratio <= 0.90
        assert table[1]["rate_bound"] / table[0]["rate_bound"] == pytest.approx(1 / math.sqrt(2))

    def test_halving_p(self):
        full = error_scaling_study("gaussian", 3, [(400, 40)], p=1.0, reps=4, seed=8)
        half = error_scaling_study("gaussian", 3, [(400, 40)], p=0.5, reps=4, seed=8)
        ratio = half[0]["mean_error"] / full[0]["mean_error"]
        assert 1.1 <= ratio <= 1.8
        assert half[0]["mean_n"] == pytest.approx(8000, rel=0.05)

    def test_zero_noise_floor(self):
        setting = SimSetting(family="gaussian", N=300, J=40, K_star=2)
        params, M_star = generate_truth(setting, np.random.default_rng(9))
        fit = fit_jml(ObservationSet.from_dense(M_star), 2, "gaussian")
        assert scaled_frobenius_error(fit.M, M_star) <= 0.05

    def test_table_fields(self):
        table = error_scaling_study("logistic", 1, [(40, 10)], reps=2, seed=1)
        assert set(table[0]) == {"N", "J", "p", "reps", "mean_error", "sd_error", "mean_n",
                                 "rate_bound"}


class TestHadamard:
    def test_equal_matrices(self):
        M = np.random.default_rng(0).normal(size=(5, 5))
        lhs, rhs, holds = hadamard_nuclear_check(M, M, 2.0, 3, 3)
        assert lhs == 0.0 and rhs == 0.0 and holds

    def test_pairs_are_feasible(self):
        rng = np.random.default_rng(3)
        M, M_star = random_low_rank_pair(20, 20, 3, 3, 2.0, rng)
        assert np.abs(M).max() <= 4.0 and np.abs(M_star).max() <= 4.0
        assert np.linalg.matrix_rank(M) <= 3 and np.linalg.matrix_rank(M_star) <= 3

    def test_audit_no_violation(self):
        out = hadamard_audit(trials=200, seed=4)
        assert out["violations"] == 0 and out["trials"] == 200
        assert 0 < out["max_ratio"] < 1

    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_aligned_rank_one_probe(self, r):
        # every factor row at the same boundary point and M* = -M
        C, N = 2.0, 20
        g = np.zeros(r)
        g[0] = C
        M = np.outer(np.tile(g, (N, 1)) @ g, np.ones(1)) @ np.ones((1, N))
        lhs, rhs, holds = hadamard_nuclear_check(M, -M, C, r, r)
        assert holds
        assert lhs / rhs == pytest.approx(1 / math.sqrt(2 * r), rel=1e-12)
