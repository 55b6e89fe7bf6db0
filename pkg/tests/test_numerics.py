"""
This module contains unit tests for the autodiff engine in `numerics`: forward values of
the core operations against closed forms and naive oracles, and reverse-mode gradients
against central finite differences.
"""

import threading

import numpy as np
import pytest

import numerics as nx
from errors import ConfigError
from numerics import DimensionError, NumericError, Node, grad_check, no_grad, parameter


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestAffine:
    def test_identity(self):
        out = nx.affine(np.array([[1.0, 0.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out.value, [[1.0, 0.0]])

    def test_hand_sum(self):
        out = nx.affine(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(out.value, [[4.0]])

    def test_matches_triple_loop(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                expected[i, j] = sum(x[i, k] * w[k, j] for k in range(4)) + b[j]
        np.testing.assert_allclose(nx.affine(x, w, b).value, expected, atol=1e-12)

    def test_batched_input(self, rng):
        x = rng.normal(size=(2, 5, 3))
        out = nx.affine(x, np.eye(3), np.zeros(3))
        assert out.shape == (2, 5, 3)
        np.testing.assert_allclose(out.value, x)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            nx.affine(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))

    def test_gradients(self, rng):
        x = parameter(rng.normal(size=(2, 3, 4)))
        w, b = parameter(rng.normal(size=(4, 2))), parameter(rng.normal(size=2))
        assert grad_check(lambda: nx.sum(nx.mul(nx.affine(x, w, b), nx.affine(x, w, b))), [x, w, b]) < 1e-4


class TestSoftmax:
    @pytest.mark.parametrize(
        "logits, expected",
        [
            ([0.0, 0.0], [0.5, 0.5]),
            ([1000.0, 1000.0], [0.5, 0.5]),  # no overflow
            ([0.0, np.log(3.0)], [0.25, 0.75]),
        ],
    )
    def test_closed_forms(self, logits, expected):
        np.testing.assert_allclose(nx.softmax(np.array(logits)).value, expected, atol=1e-12)

    def test_rows_are_probability_vectors(self, rng):
        out = nx.softmax(rng.normal(scale=10.0, size=(5, 7))).value
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)

    def test_nan_input_raises(self):
        with pytest.raises(NumericError):
            nx.softmax(np.array([0.0, np.nan]))

    def test_log_softmax_consistent(self, rng):
        x = rng.normal(size=(3, 6))
        np.testing.assert_allclose(np.exp(nx.log_softmax(x).value), nx.softmax(x).value, atol=1e-12)

    def test_gradients(self, rng):
        x = parameter(rng.normal(size=(3, 5)))
        target = rng.normal(size=(3, 5))
        assert grad_check(lambda: nx.sum(nx.mul(nx.softmax(x), target)), [x]) < 1e-4
        assert grad_check(lambda: nx.sum(nx.mul(nx.log_softmax(x), target)), [x]) < 1e-4


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        out = nx.layer_norm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4))
        np.testing.assert_allclose(out.value, 0.0, atol=1e-12)

    def test_unit_variance_pair(self):
        out = nx.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out.value, [1.0, -1.0], atol=1e-5)

    def test_random_input_is_standardized(self, rng):
        out = nx.layer_norm(rng.normal(loc=3.0, scale=10.0, size=(4, 16)), np.ones(16), np.zeros(16)).value
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_gradients(self, rng):
        x = parameter(rng.normal(size=(2, 3, 5)))
        gamma, beta = parameter(rng.normal(size=5)), parameter(rng.normal(size=5))
        target = rng.normal(size=(2, 3, 5))
        assert grad_check(lambda: nx.sum(nx.mul(nx.layer_norm(x, gamma, beta), target)), [x, gamma, beta]) < 1e-4


class TestDepthwiseConv:
    def test_delta_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 6, 3))
        kernel = np.zeros((5, 3))
        kernel[2] = 1.0
        np.testing.assert_array_equal(nx.depthwise_conv1d(x, kernel).value, x)

    def test_moving_average(self):
        x = np.array([0.0, 3.0, 0.0]).reshape(1, 3, 1)
        out = nx.depthwise_conv1d(x, np.full((3, 1), 1.0 / 3.0))
        np.testing.assert_allclose(out.value.reshape(-1), [1.0, 1.0, 1.0])

    def test_matches_sliding_window(self, rng):
        x, kernel = rng.normal(size=(2, 7, 4)), rng.normal(size=(3, 4))
        expected = np.zeros_like(x)
        for b in range(2):
            for t in range(7):
                for k in range(3):
                    src = t + k - 1
                    if 0 <= src < 7:
                        expected[b, t] += x[b, src] * kernel[k]
        np.testing.assert_allclose(nx.depthwise_conv1d(x, kernel).value, expected, atol=1e-12)

    def test_even_kernel_raises(self):
        with pytest.raises(ConfigError):
            nx.depthwise_conv1d(np.zeros((1, 4, 2)), np.zeros((4, 2)))

    def test_gradients(self, rng):
        x, kernel = parameter(rng.normal(size=(2, 5, 3))), parameter(rng.normal(size=(3, 3)))
        target = rng.normal(size=(2, 5, 3))
        assert grad_check(lambda: nx.sum(nx.mul(nx.depthwise_conv1d(x, kernel), target)), [x, kernel]) < 1e-4


class TestStridedConv:
    @pytest.mark.parametrize("frames, expected", [(1, 1), (4, 2), (5, 3), (8, 4)])
    def test_output_length(self, frames, expected):
        out = nx.conv1d_strided(np.zeros((1, frames, 2)), np.zeros((3, 2, 4)), np.zeros(4))
        assert out.shape == (1, expected, 4)

    def test_gradients(self, rng):
        x = parameter(rng.normal(size=(2, 7, 3)))
        w, b = parameter(rng.normal(size=(3, 3, 2))), parameter(rng.normal(size=2))
        target = rng.normal(size=(2, 4, 2))
        assert grad_check(lambda: nx.sum(nx.mul(nx.conv1d_strided(x, w, b), target)), [x, w, b]) < 1e-4


class TestGradCheck:
    def test_sum_of_squares(self):
        x = parameter([1.0, 2.0])
        err = grad_check(lambda: nx.sum(nx.mul(x, x)), [x])
        np.testing.assert_allclose(x.grad, [2.0, 4.0])
        assert err < 1e-6

    def test_non_finite_function_raises(self):
        x = parameter([0.0])
        with pytest.raises(NumericError):
            grad_check(lambda: nx.sum(nx.log(x)), [x])

    def test_subsampled_entries(self, rng):
        x = parameter(rng.normal(size=(20, 20)))
        assert grad_check(lambda: nx.sum(nx.mul(x, x)), {"x": x}, max_entries=10) < 1e-4

    @pytest.mark.parametrize(
        "op",
        [nx.relu, nx.sigmoid, nx.silu, nx.exp, lambda v: nx.glu(v, axis=-1)],
        ids=["relu", "sigmoid", "silu", "exp", "glu"],
    )
    def test_elementwise_ops(self, rng, op):
        x = parameter(rng.normal(size=(3, 4)) + 0.05)
        target = rng.normal(size=op(x).shape)
        assert grad_check(lambda: nx.sum(nx.mul(op(x), target)), [x]) < 1e-4

    def test_gather_accumulates_repeated_rows(self):
        table = parameter(np.arange(6.0).reshape(3, 2))
        out = nx.sum(nx.gather(table, np.array([0, 0, 2])))
        out.backward()
        np.testing.assert_array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


class TestGraph:
    def test_grad_shape_matches_value_after_backward(self, rng):
        a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(3,)))
        out = nx.sum(nx.add(a, b))
        out.backward()
        assert a.grad.shape == a.shape
        assert b.grad.shape == b.shape
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_reflected_operators_with_arrays(self):
        x = parameter([1.0, 2.0])
        out = np.array([1.0, 1.0]) + x
        assert isinstance(out, Node)
        np.testing.assert_array_equal(out.value, [2.0, 3.0])

    def test_no_grad_records_nothing(self):
        x = parameter([1.0, 2.0])
        with no_grad():
            out = nx.mul(x, x)
        assert not out.requires_grad
        assert out.parents == ()

    def test_no_grad_is_thread_local(self):
        x = parameter([1.0])
        seen = []

        def other_thread():
            seen.append(nx.mul(x, x).requires_grad)

        with no_grad():
            worker = threading.Thread(target=other_thread)
            worker.start()
            worker.join()
        assert seen == [True]

    def test_detach_blocks_gradient(self):
        x = parameter([3.0])
        out = nx.sum(nx.mul(nx.detach(x), x))
        out.backward()
        np.testing.assert_array_equal(x.grad, [3.0])

    def test_dropout_identity_without_rng(self, rng):
        x = Node(rng.normal(size=(4, 4)))
        assert nx.dropout(x, 0.5, None) is x

    def test_dropout_inverted_scaling(self):
        x = Node(np.ones((200, 200)))
        out = nx.dropout(x, 0.1, np.random.default_rng(3)).value
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.9}
        assert abs(out.mean() - 1.0) < 0.02
