import numpy as np
import pytest

from sicdn import tensor as T
from sicdn.errors import ContractError, DimensionError, DomainError, NumericError

from conftest import (
    GRAD_CHECKED_OPS,
    op_gradient_case,
    run_gradient_check,
    shadow_conv2d,
    shadow_linear,
    shadow_softmax,
)


class TestLinearForward:
    def test_identity_weights(self):
        out = T.linear_forward(T.Tensor([[1.0, 2.0]]), T.Tensor([[1.0, 0.0], [0.0, 1.0]]), T.Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_sum_with_bias(self):
        out = T.linear_forward(T.Tensor([[1.0, 1.0]]), T.Tensor([[2.0, 3.0]]), T.Tensor([1.0]))
        np.testing.assert_array_equal(out.data, [[6.0]])

    def test_matches_triple_loop_oracle(self, rng):
        x = rng.standard_normal((4, 8)).astype(np.float32)
        w = rng.standard_normal((3, 8)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        out = T.linear_forward(T.Tensor(x), T.Tensor(w), T.Tensor(b))
        oracle = shadow_linear(x.astype(np.float64), w.astype(np.float64), b.astype(np.float64))
        np.testing.assert_array_equal(out.data, oracle.astype(np.float32))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            T.linear_forward(T.Tensor([[1.0, 2.0, 3.0]]), T.Tensor([[1.0, 0.0], [0.0, 1.0]]), T.Tensor([0.0, 0.0]))


class TestConv2dForward:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = T.conv2d_forward(T.Tensor(x), T.Tensor(k), stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_zero_output(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        k = np.ones((3, 2, 2, 2), dtype=np.float32)
        out = T.conv2d_forward(T.Tensor(x), T.Tensor(k))
        assert out.shape == (1, 3, 3, 3)
        np.testing.assert_array_equal(out.data, np.zeros_like(out.data))

    def test_matches_sliding_window_oracle(self, rng):
        x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        k = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
        out = T.conv2d_forward(T.Tensor(x), T.Tensor(k), stride=1, padding=0)
        oracle = shadow_conv2d(x.astype(np.float64), k.astype(np.float64))
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data, oracle.astype(np.float32))

    def test_output_shape_formula(self, rng):
        x = T.Tensor(rng.standard_normal((2, 3, 9, 7)).astype(np.float32))
        k = T.Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
        out = T.conv2d_forward(x, k, stride=2, padding=1)
        assert out.shape == (2, 4, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_kernel_larger_than_padded_input(self):
        x = T.Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        k = T.Tensor(np.zeros((1, 1, 5, 5), dtype=np.float32))
        with pytest.raises(DimensionError):
            T.conv2d_forward(x, k, stride=1, padding=1)


class TestElementwiseOps:
    def test_relu(self):
        out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softmax_symmetry(self):
        out = T.softmax(T.Tensor([[0.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_softmax_rows_sum_to_one(self, rng):
        x = rng.standard_normal((16, 5)) * 10
        out = T.softmax(T.Tensor(x))
        assert np.all(out.data > 0) and np.all(out.data < 1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(out.data, shadow_softmax(x), rtol=1e-5, atol=1e-7)

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            T.log(T.Tensor([1.0, 0.0]))

    def test_flatten_row_major_order(self, rng):
        x = rng.standard_normal((2, 3, 4)).astype(np.float32)
        out = T.flatten(T.Tensor(x))
        assert out.shape == (2, 12)
        for b in range(2):
            for i in range(3):
                for j in range(4):
                    assert out.data[b, i * 4 + j] == x[b, i, j]

    def test_flatten_then_unflatten_is_identity(self, rng):
        x = rng.standard_normal((2, 3, 4)).astype(np.float32)
        flat = T.flatten(T.Tensor(x))
        back = T.reshape(flat, (2, 3, 4))
        np.testing.assert_array_equal(back.data, x)

    def test_multiply_overflow_raises(self):
        with pytest.raises(NumericError):
            T.multiply(T.Tensor([3.0e38]), T.Tensor([3.0e38]))

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(T.Tensor([1.0, 2.0]), T.Tensor([1.0, 2.0, 3.0]))


class TestBackward:
    def test_linear_derivative(self):
        w = T.Tensor([3.0], requires_grad=True)
        x = T.Tensor([2.0])
        loss = T.sum_all(T.multiply(w, x))
        T.backward(loss)
        np.testing.assert_array_equal(w.grad, [2.0])

    def test_non_participating_tensor_has_zero_grad(self):
        w = T.Tensor([3.0], requires_grad=True)
        t = T.Tensor([5.0], requires_grad=True)
        loss = T.sum_all(T.multiply(w, T.Tensor([2.0])))
        T.backward(loss)
        np.testing.assert_array_equal(t.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        w = T.Tensor([1.0, 2.0], requires_grad=True)
        out = T.relu(w)
        with pytest.raises(ContractError):
            T.backward(out)

    def test_no_graph_rejected(self):
        with pytest.raises(ContractError):
            T.backward(T.Tensor([1.0], requires_grad=True))

    def test_graph_freed_after_backward(self):
        w = T.Tensor([1.0], requires_grad=True)
        out = T.sum_all(T.relu(w))
        T.backward(out)
        assert out._node is None

    def test_shared_input_accumulates(self):
        # y = w*w has derivative 2w
        w = T.Tensor([3.0], requires_grad=True)
        loss = T.sum_all(T.multiply(w, w))
        T.backward(loss)
        np.testing.assert_array_equal(w.grad, [6.0])

    def test_deterministic_gradients(self, rng):
        x = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((3, 6)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        runs = []
        for _ in range(2):
            xt = T.Tensor(x, requires_grad=True)
            wt = T.Tensor(w, requires_grad=True)
            bt = T.Tensor(b, requires_grad=True)
            loss = T.mean_all(T.softmax(T.linear_forward(T.relu(xt), wt, bt)))
            T.backward(loss)
            runs.append((xt.grad.copy(), wt.grad.copy(), bt.grad.copy()))
        for a, b2 in zip(runs[0], runs[1]):
            np.testing.assert_array_equal(a, b2)


class TestGradientChecks:
    @pytest.mark.parametrize("op", GRAD_CHECKED_OPS)
    def test_op_matches_finite_differences(self, op):
        rng = np.random.default_rng(hash(op) % (2**32))
        for _ in range(5):
            build_loss, shadow_scalar, arrays = op_gradient_case(op, rng)
            run_gradient_check(build_loss, shadow_scalar, arrays)

    def test_three_layer_network_end_to_end(self, rng):
        r = rng.standard_normal((2, 3))

        def build_loss(x, k, w, b):
            feat = T.global_average_pool(T.relu(T.conv2d_forward(x, k, stride=1, padding=1)))
            logits = T.linear_forward(feat, w, b)
            return T.sum_all(T.multiply(T.softmax(logits), T.Tensor(r)))

        def shadow_scalar(arrs):
            x, k, w, b = arrs
            feat = shadow_conv2d(x, k, stride=1, padding=1)
            feat = np.where(feat > 0, feat, 0.0).mean(axis=(2, 3))
            logits = shadow_linear(feat, w, b)
            return float((shadow_softmax(logits) * r).sum())

        arrays = [
            rng.standard_normal((2, 1, 6, 6)),
            rng.standard_normal((2, 1, 3, 3)),
            rng.standard_normal((3, 2)),
            rng.standard_normal(3),
        ]
        run_gradient_check(build_loss, shadow_scalar, arrays)
