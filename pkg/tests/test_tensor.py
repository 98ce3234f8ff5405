import numpy as np
import pytest

from bprg import tensor as T
from bprg.errors import DimensionError, InputError, NumericError, UsageError
from bprg.model import forward
from conftest import rel_err, tiny_mlp


def grad_of(fn, *tensors):
    """Run fn under a tape and backprop from its scalar output."""
    with T.Tape() as tape:
        out = fn(*tensors)
        loss = out if out.data.size == 1 else T.tensor_sum(out)
        T.backward(loss, tape)
    return [t.grad for t in tensors]


class TestMatmul:
    def test_identity(self):
        a = T.Tensor(np.eye(2))
        b = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(a, b).data, b.data)

    def test_1x2_times_2x1(self):
        out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        npr = np.random.default_rng(3)
        a = T.Tensor(npr.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
        b = T.Tensor(npr.normal(size=(4, 2)), requires_grad=True, dtype=np.float64)
        grad_of(T.matmul, a, b)
        fd_a = T.finite_difference_gradient(
            lambda x: float((x @ b.data).sum()), a.data.copy(), h=1e-5
        )
        fd_b = T.finite_difference_gradient(
            lambda x: float((a.data @ x).sum()), b.data.copy(), h=1e-5
        )
        assert rel_err(a.grad, fd_a) < 1e-6
        assert rel_err(b.grad, fd_b) < 1e-6


class TestRelu:
    def test_sign_cases(self):
        out = T.relu(T.Tensor([-1.0, 2.0, 0.0]))
        assert out.data.tolist() == [0.0, 2.0, 0.0]

    def test_dead_region(self):
        x = T.Tensor([-1.0, -2.0, -0.5], requires_grad=True)
        (g,) = grad_of(T.relu, x)
        assert np.all(T.relu(x).data == 0)
        assert np.all(g == 0)

    def test_gradient_vs_finite_differences(self):
        npr = np.random.default_rng(4)
        vals = npr.normal(size=12)
        vals = vals[np.abs(vals) > 1e-3]  # stay away from the kink
        x = T.Tensor(vals, requires_grad=True, dtype=np.float64)
        grad_of(T.relu, x)
        fd = T.finite_difference_gradient(
            lambda v: float(np.maximum(v, 0).sum()), x.data.copy(), h=1e-5
        )
        assert rel_err(x.grad, fd) < 1e-6


class TestConv2d:
    def test_sum_of_window(self):
        x = T.Tensor(np.ones((1, 1, 3, 3)))
        k = T.Tensor(np.ones((1, 1, 3, 3)))
        assert T.conv2d(x, k).data.tolist() == [[[[9.0]]]]

    def test_delta_kernel_is_center_crop(self):
        npr = np.random.default_rng(5)
        x = T.Tensor(npr.normal(size=(2, 1, 5, 5)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = T.conv2d(x, T.Tensor(k))
        assert np.allclose(out.data[:, 0], x.data[:, 0, 1:4, 1:4])

    def test_too_small(self):
        with pytest.raises(DimensionError):
            T.conv2d(T.Tensor(np.ones((1, 1, 2, 5))), T.Tensor(np.ones((1, 1, 3, 3))))

    def test_gradient_vs_finite_differences(self):
        npr = np.random.default_rng(6)
        x = T.Tensor(npr.normal(size=(2, 2, 5, 5)), requires_grad=True, dtype=np.float64)
        k = T.Tensor(npr.normal(size=(3, 2, 3, 3)), requires_grad=True, dtype=np.float64)

        def f_x(v):
            return float(T.conv2d(T.Tensor(v, dtype=np.float64), T.Tensor(k.data, dtype=np.float64)).data.sum())

        def f_k(v):
            return float(T.conv2d(T.Tensor(x.data, dtype=np.float64), T.Tensor(v, dtype=np.float64)).data.sum())

        grad_of(T.conv2d, x, k)
        assert rel_err(x.grad, T.finite_difference_gradient(f_x, x.data.copy())) < 1e-6
        assert rel_err(k.grad, T.finite_difference_gradient(f_k, k.data.copy())) < 1e-6


class TestSoftmaxCrossEntropy:
    def test_uniform_softmax(self):
        loss = T.softmax_cross_entropy_mean(T.Tensor([[0.0, 0.0, 0.0]]), [0])
        assert abs(float(loss.data) - np.log(3.0)) < 1e-6

    def test_gradient_is_softmax_minus_onehot(self):
        logits = T.Tensor([[0.0, 0.0, 0.0]], requires_grad=True, dtype=np.float64)
        grad_of(lambda t: T.softmax_cross_entropy_mean(t, [0]), logits)
        assert np.allclose(logits.grad, [[1 / 3 - 1, 1 / 3, 1 / 3]])

    def test_stabilization(self):
        loss = T.softmax_cross_entropy_mean(T.Tensor([[1000.0, 0.0]]), [0])
        assert np.isfinite(float(loss.data))
        assert float(loss.data) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            T.softmax_cross_entropy_mean(T.Tensor([[0.0, 0.0]]), [2])

    def test_softmax_rows_sum_to_one(self):
        npr = np.random.default_rng(7)
        probs = T.softmax(npr.normal(scale=10, size=(20, 6)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        grad_of(T.tensor_sum, x)
        assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))

    def test_fanout_accumulates(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        grad_of(lambda t: T.tensor_sum(T.add(t, t)), x)
        assert np.array_equal(x.grad, np.array([2.0, 2.0], dtype=np.float32))

    def test_disconnected_grad_stays_zero(self):
        x = T.Tensor([1.0], requires_grad=True)
        y = T.Tensor([2.0], requires_grad=True)
        with T.Tape() as tape:
            loss = T.tensor_sum(T.relu(x))
            T.backward(loss, tape)
        assert np.all(y.grad == 0)

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.Tape() as tape:
            y = T.relu(x)
            with pytest.raises(UsageError):
                T.backward(y, tape)

    def test_full_mlp_gradient_vs_finite_differences(self):
        m = tiny_mlp(seed=11, dims=(6, 8, 4, 3))
        npr = np.random.default_rng(8)
        X = npr.normal(size=(5, 6))
        y = npr.integers(0, 3, size=5)
        m.zero_grads()
        with T.Tape() as tape:
            loss = T.softmax_cross_entropy_mean(forward(m, T.Tensor(X, dtype=np.float64)), y)
            T.backward(loss, tape)

        def loss_at(pid, arr):
            old = m.params[pid].data.copy()
            np.copyto(m.params[pid].data, arr.reshape(old.shape))
            val = float(
                T.softmax_cross_entropy_mean(forward(m, T.Tensor(X, dtype=np.float64)), y).data
            )
            np.copyto(m.params[pid].data, old)
            return val

        for pid in m.param_order():
            fd = T.finite_difference_gradient(
                lambda a, pid=pid: loss_at(pid, a), m.params[pid].data.copy()
            )
            assert rel_err(m.params[pid].grad.reshape(fd.shape), fd) < 1e-6


class TestSgdMomentum:
    def test_plain_step(self):
        w = T.Tensor([1.0], requires_grad=True)
        w.grad = np.array([1.0], dtype=np.float32)
        T.sgd_momentum_step([w], T.OptimizerState(0.1, 0.0))
        assert np.allclose(w.data, [0.9])

    def test_momentum_recurrence(self):
        w = T.Tensor([1.0], requires_grad=True, dtype=np.float64)
        state = T.OptimizerState(0.1, 0.9)
        w.grad = np.array([1.0])
        T.sgd_momentum_step([w], state)
        assert np.allclose(state.velocity[0], [1.0])
        w.grad = np.array([1.0])
        T.sgd_momentum_step([w], state)
        assert np.allclose(state.velocity[0], [1.9])
        assert np.allclose(w.data, [1.0 - 0.1 * (1.0 + 1.9)])

    def test_zero_gradient_fixed_point(self):
        w = T.Tensor([3.0], requires_grad=True)
        w.grad = np.zeros(1, dtype=np.float32)
        T.sgd_momentum_step([w], T.OptimizerState(0.1, 0.9))
        assert w.data.tolist() == [3.0]

    def test_missing_grad(self):
        w = T.Tensor([1.0])
        with pytest.raises(UsageError):
            T.sgd_momentum_step([w], T.OptimizerState(0.1))


class TestFiniteDifferences:
    def test_quadratic(self):
        fd = T.finite_difference_gradient(lambda x: float((x**2).sum()), np.array([1.0, 2.0]))
        assert np.allclose(fd, [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        fd = T.finite_difference_gradient(lambda x: 7.0, np.array([1.0, 2.0, 3.0]))
        assert np.all(fd == 0)


def test_op_determinism():
    npr = np.random.default_rng(9)
    a = npr.normal(size=(8, 8)).astype(np.float32)
    b = npr.normal(size=(8, 8)).astype(np.float32)
    r1 = T.matmul(T.Tensor(a), T.Tensor(b)).data
    r2 = T.matmul(T.Tensor(a), T.Tensor(b)).data
    assert r1.tobytes() == r2.tobytes()


def test_nonfinite_rejected():
    big = np.array([[1e38]], dtype=np.float32)
    with np.errstate(over="ignore"), pytest.raises(NumericError):
        T.matmul(T.Tensor(big), T.Tensor(big))
