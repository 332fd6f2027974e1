import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dplstm.nn import (AdadeltaState, ShapeError, activation, activation_grad, adadelta_step,
                       affine, cubic, finite_difference_gradcheck, glorot_init, relative_error,
                       sample_dropout_mask, sigmoid, softmax)


class TestAffine:
    def test_identity(self):
        np.testing.assert_array_equal(affine(np.eye(2), np.array([3.0, 4.0]), np.zeros(2)), [3, 4])

    def test_hand_product(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(affine(W, np.ones(2), np.array([1.0, 0.0])), [4, 7])

    def test_rows(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        X = np.array([[1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_array_equal(affine(W, X, np.zeros(2)), [[3, 7], [2, 4]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            affine(np.zeros((3, 2)), np.zeros(3), np.zeros(3))
        with pytest.raises(ShapeError):
            affine(np.zeros((3, 2)), np.zeros(2), np.zeros(2))


class TestActivations:
    def test_values(self):
        assert sigmoid(0.0) == 0.5
        assert cubic(2.0) == 8.0
        assert activation_grad("cubic", 2.0) == 12.0
        assert activation("tanh", 0.0) == 0.0

    def test_sigmoid_extremes(self):
        with np.errstate(over="raise"):
            np.testing.assert_allclose(sigmoid(np.array([-1000.0, 1000.0])), [0.0, 1.0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            activation("relu", 1.0)

    @pytest.mark.parametrize("kind", ["tanh", "cubic", "sigmoid"])
    def test_grad_matches_difference(self, kind):
        x = np.linspace(-2, 2, 9)
        h = 1e-6
        fd = (activation(kind, x + h) - activation(kind, x - h)) / (2 * h)
        np.testing.assert_allclose(activation_grad(kind, x), fd, rtol=1e-7, atol=1e-9)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3)

    def test_large_equal(self):
        with np.errstate(over="raise"):
            np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_ln2(self):
        np.testing.assert_allclose(softmax(np.array([np.log(2), 0.0])), [2 / 3, 1 / 3], rtol=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
    def test_is_distribution(self, z):
        p = softmax(z)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-12


class TestDropout:
    def test_zero_rate(self):
        np.testing.assert_array_equal(sample_dropout_mask(5, 0.0, np.random.default_rng(0)), np.ones(5))

    def test_half_rate_fraction(self):
        m = sample_dropout_mask(100_000, 0.5, np.random.default_rng(0))
        assert abs(np.mean(m == 0) - 0.5) < 0.01
        assert set(np.unique(m)) == {0.0, 2.0}

    @pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
    def test_expectation(self, p):
        m = sample_dropout_mask(100_000, p, np.random.default_rng(1))
        assert abs(m.mean() - 1.0) < 0.02

    @pytest.mark.parametrize("p", [1.0, -0.1, 1.5])
    def test_bad_rate(self, p):
        with pytest.raises(ValueError):
            sample_dropout_mask(3, p, np.random.default_rng(0))


class TestGlorot:
    def test_bounds(self):
        W = glorot_init(100, 100, np.random.default_rng(0))
        assert np.abs(W).max() <= np.sqrt(6 / 200)
        assert np.abs(W).max() > 0.9 * np.sqrt(6 / 200)
        assert np.abs(glorot_init(1, 1, np.random.default_rng(0))).max() <= np.sqrt(3)

    def test_mean(self):
        assert abs(glorot_init(200, 200, np.random.default_rng(0)).mean()) < 0.01

    def test_zero_dimension(self):
        with pytest.raises(ValueError):
            glorot_init(0, 3, np.random.default_rng(0))


class TestAdadelta:
    def test_first_step(self):
        p = np.array([0.0])
        state = AdadeltaState.like(p)
        delta = adadelta_step(p, np.array([1.0]), state)
        np.testing.assert_allclose(state.sq_grad, [0.05])
        expected = -np.sqrt(1e-6) / np.sqrt(0.050001)
        np.testing.assert_allclose(delta, [expected], rtol=1e-12)
        assert abs(expected - -4.4721e-3) < 1e-7
        np.testing.assert_array_equal(p, delta)

    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        state = AdadeltaState.like(p)
        adadelta_step(p, np.zeros(2), state)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    @given(arrays(np.float64, 6, elements=st.floats(-10, 10)))
    def test_descent_direction(self, g):
        p = np.zeros(6)
        state = AdadeltaState.like(p)
        for _ in range(3):
            delta = adadelta_step(p, g, state)
            np.testing.assert_array_equal(np.sign(delta), -np.sign(g))
        assert np.all(state.sq_grad >= 0) and np.all(state.sq_delta >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adadelta_step(np.zeros(2), np.zeros(3), AdadeltaState.like(np.zeros(2)))


class TestGradcheck:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.theta = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}

    def loss(self):
        return 0.5 * sum(float(np.sum(v * v)) for v in self.theta.values())

    def test_quadratic(self):
        analytic = {k: v.copy() for k, v in self.theta.items()}
        report = finite_difference_gradcheck(self.loss, self.theta, analytic)
        assert max(report.max_rel_error.values()) < 1e-9
        assert report.passed

    def test_corrupted_gradient_flagged(self):
        analytic = {"a": self.theta["a"] * 2.0, "b": self.theta["b"].copy()}
        report = finite_difference_gradcheck(self.loss, self.theta, analytic)
        # |2g - g| / max(|2g|, |g|) = 1/2
        assert report.max_rel_error["a"] == pytest.approx(0.5, abs=1e-6)
        assert report.failures() == ["a"]

    def test_params_restored(self):
        before = {k: v.copy() for k, v in self.theta.items()}
        finite_difference_gradcheck(self.loss, self.theta, before, max_coords=2,
                                    rng=np.random.default_rng(0))
        for k in before:
            np.testing.assert_array_equal(self.theta[k], before[k])

    def test_non_finite_loss(self):
        with pytest.raises(FloatingPointError):
            finite_difference_gradcheck(lambda: float("nan"), self.theta, self.theta)

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
