"""Numerical primitives: stable softmax, the finite-difference oracle, and
reproducible substreams."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ovadapt.numerics import (
    binary_entropy,
    finite_diff_grad,
    root_rng,
    sigmoid,
    softmax,
    substream,
)

# frozen at 40-digit precision: exp(v_i) / sum_j exp(v_j) for v = [1, 2, 3]
SOFTMAX_123 = np.array([0.09003057317038045800, 0.24472847105479765247, 0.66524095577482188953])


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)

    def test_large_logit_no_overflow(self):
        out = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] == pytest.approx(0.0, abs=1e-12)

    def test_reference_values(self):
        np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), SOFTMAX_123, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = root_rng(5)
        v = rng.normal(scale=10, size=(50, 7))
        out = softmax(v, axis=1)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_monotone_in_input_order(self):
        v = np.array([-2.0, 0.5, 0.4, 3.0])
        out = softmax(v)
        assert np.array_equal(np.argsort(out), np.argsort(v))

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=8),
           st.floats(-1000, 1000))
    def test_shift_invariance(self, vals, c):
        v = np.array(vals)
        np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.nan]))


class TestSigmoid:
    def test_matches_two_way_softmax(self):
        rng = root_rng(6)
        z = rng.normal(scale=5, size=(20, 2))
        np.testing.assert_allclose(
            sigmoid(z[:, 0] - z[:, 1]), softmax(z, axis=1)[:, 0], atol=1e-14
        )

    def test_saturation_is_finite(self):
        out = sigmoid(np.array([-1e4, 1e4]))
        assert np.all(np.isfinite(out))
        assert out[0] == 0.0 and out[1] == 1.0


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda p: p[0] ** 2, np.array([3.0]), eps=1e-5)
        assert g[0] == pytest.approx(6.0, abs=1e-8)

    def test_constant(self):
        g = finite_diff_grad(lambda p: 7.5, np.array([1.0, -2.0, 0.0]))
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_multivariate(self):
        f = lambda p: float(np.sin(p[0]) + p[1] * p[0])
        p = np.array([0.3, -1.2])
        g = finite_diff_grad(f, p, eps=1e-6)
        np.testing.assert_allclose(g, [np.cos(0.3) - 1.2, 0.3], atol=1e-8)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda p: 0.0, np.array([1.0]), eps=0.0)

    def test_nonfinite_objective_propagates(self):
        with pytest.raises(FloatingPointError):
            finite_diff_grad(lambda p: float("nan"), np.array([1.0]))


class TestBinaryEntropy:
    def test_max_at_half(self):
        assert binary_entropy(np.array(0.5)) == pytest.approx(np.log(2), abs=1e-15)

    def test_saturated_near_zero(self):
        assert binary_entropy(np.array(1 - 1e-7)) < 2e-6


class TestRngStreams:
    def test_substream_bit_reproducible(self):
        a = substream(123, "init").normal(size=100)
        b = substream(123, "init").normal(size=100)
        np.testing.assert_array_equal(a, b)

    def test_labels_give_independent_streams(self):
        a = substream(123, "init").normal(size=100)
        b = substream(123, "batch-source").normal(size=100)
        assert not np.array_equal(a, b)

    def test_seeds_differ(self):
        a = substream(1, "init").normal(size=10)
        b = substream(2, "init").normal(size=10)
        assert not np.array_equal(a, b)

    def test_root_rng_reproducible(self):
        np.testing.assert_array_equal(
            root_rng(42).integers(0, 1000, size=20), root_rng(42).integers(0, 1000, size=20)
        )
