"""Tests for the dense numeric kernel."""

import math

import numpy as np
import pytest

from cxralign.numerics import (
    GradCheckReport,
    VerificationError,
    finite_diff_check,
    kl_rows,
    l2_normalize_rows,
    matmul,
    softmax_rows,
)


class TestMatmul:
    def test_identity(self):
        out = matmul([[1, 0], [0, 1]], [[2, 3], [4, 5]])
        np.testing.assert_array_equal(out, [[2, 3], [4, 5]])

    def test_dot_product(self):
        out = matmul([[1, 2]], [[3], [4]])
        np.testing.assert_array_equal(out, [[11]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_matches_naive_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, k, n = rng.integers(1, 7, size=3)
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            expected = np.zeros((m, n))
            for i in range(m):
                for j in range(n):
                    acc = 0.0
                    for l in range(k):
                        acc += a[i, l] * b[l, j]
                    expected[i, j] = acc
            np.testing.assert_allclose(matmul(a, b), expected, atol=1e-12)

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            matmul([[np.inf, 1.0]], [[1.0], [1.0]])


class TestL2NormalizeRows:
    def test_three_four_five(self):
        out, zero = l2_normalize_rows([[3.0, 4.0]])
        np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-15)
        assert not zero.any()

    def test_zero_row_unchanged_and_flagged(self):
        out, zero = l2_normalize_rows([[0.0, 0.0]])
        np.testing.assert_array_equal(out, [[0.0, 0.0]])
        assert zero.tolist() == [True]

    def test_random_rows_have_unit_norm(self):
        rng = np.random.default_rng(1)
        out, zero = l2_normalize_rows(rng.normal(size=(5, 8)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
        assert not zero.any()


class TestSoftmaxRows:
    def test_symmetric_row(self):
        np.testing.assert_allclose(softmax_rows([[0.0, 0.0]], 1.0), [[0.5, 0.5]], atol=1e-15)

    def test_analytic_two_thirds(self):
        out = softmax_rows([[math.log(2.0), 0.0]], 1.0)
        np.testing.assert_allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_low_temperature_value(self):
        # (0.5 - 0.3) / 0.1 = 2 so the first entry is 1 / (1 + e^-2).
        out = softmax_rows([[0.5, 0.3]], 0.1)
        expected = 1.0 / (1.0 + math.exp(-2.0))
        np.testing.assert_allclose(out, [[expected, 1.0 - expected]], atol=1e-9)
        assert f"{out[0, 0]:.6f}" == "0.880797"

    def test_rows_sum_to_one_and_shift_invariance(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(scale=5.0, size=(20, 7))
        out = softmax_rows(logits, 0.37)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out > 0.0) and np.all(out < 1.0)
        shifted = softmax_rows(logits + 123.456, 0.37)
        np.testing.assert_allclose(out, shifted, atol=1e-12)

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            softmax_rows([[1.0, 2.0]], 0.0)


class TestKlRows:
    def test_identity_is_zero(self):
        t = np.array([[0.2, 0.8], [0.5, 0.5]])
        assert kl_rows(t, t) == pytest.approx(0.0, abs=1e-15)

    def test_one_hot_against_uniform(self):
        assert kl_rows([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(3)
        t = rng.random((3, 4))
        t /= t.sum(axis=1, keepdims=True)
        p = rng.random((3, 4)) + 0.05
        p /= p.sum(axis=1, keepdims=True)
        expected = 0.0
        for i in range(3):
            for j in range(4):
                if t[i, j] > 0.0:
                    expected += t[i, j] * math.log(t[i, j] / p[i, j])
        expected /= 3.0
        assert kl_rows(t, p) == pytest.approx(expected, abs=1e-12)

    def test_zero_prob_on_support_rejected(self):
        with pytest.raises(ValueError, match="support"):
            kl_rows([[1.0, 0.0]], [[0.0, 1.0]])

    def test_non_negative_with_zero_only_at_equality(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            t = rng.random((2, 5))
            t /= t.sum(axis=1, keepdims=True)
            p = rng.random((2, 5)) + 1e-3
            p /= p.sum(axis=1, keepdims=True)
            assert kl_rows(t, p) >= 0.0
        t = rng.random((2, 5)) + 1e-3
        t /= t.sum(axis=1, keepdims=True)
        assert kl_rows(t, t) <= 1e-12


class TestFiniteDiffCheck:
    def test_quadratic(self):
        theta = np.array([[1.0, 2.0]])

        def loss(params):
            return float((params["theta"] ** 2).sum())

        report = finite_diff_check(loss, {"theta": theta}, {"theta": 2.0 * theta})
        assert isinstance(report, GradCheckReport)
        assert report.max_rel_error < 1e-8
        assert report.n_checked == 2

    def test_constant_loss(self):
        theta = np.array([[0.3, -0.7, 1.1]])
        report = finite_diff_check(
            lambda p: 42.0, {"theta": theta}, {"theta": np.zeros_like(theta)}
        )
        assert report.max_rel_error < 1e-8

    def test_wrong_gradient_is_caught(self):
        theta = np.array([[1.0, 2.0]])
        report = finite_diff_check(
            lambda p: float((p["theta"] ** 2).sum()),
            {"theta": theta},
            {"theta": 3.0 * theta},
        )
        assert report.max_rel_error > 0.1

    def test_non_deterministic_loss_detected(self):
        state = {"calls": 0}

        def flaky(params):
            state["calls"] += 1
            return float(state["calls"])

        with pytest.raises(VerificationError):
            finite_diff_check(flaky, {"x": np.ones((1, 1))}, {"x": np.ones((1, 1))})
