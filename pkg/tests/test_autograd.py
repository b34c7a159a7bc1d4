import numpy as np
import pytest

from lfvasr import autograd, numerics
from lfvasr.autograd import Parameter, Tensor
from lfvasr.errors import ShapeError, UsageError


def test_backward_requires_scalar():
    x = Parameter(np.ones(3), name="x")
    with pytest.raises(UsageError):
        autograd.mul(x, 2.0).backward()


def test_backward_requires_graph():
    with pytest.raises(UsageError):
        Tensor(np.array(1.0)).backward()


def test_sum_backward_is_ones():
    x = Parameter(np.arange(6.0).reshape(2, 3), name="x")
    autograd.sum_(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_half_norm_gradient_is_value():
    v = Parameter(np.array([1.0, -2.0, 3.0]), name="v")
    loss = autograd.mul(autograd.sum_(autograd.mul(v, v)), 0.5)
    loss.backward()
    assert np.allclose(v.grad, v.data, atol=1e-15)


def test_reuse_accumulates():
    x = Parameter(np.array([3.0]), name="x")
    autograd.sum_(autograd.add(x, x)).backward()
    assert x.grad[0] == 2.0


def test_deep_chain_no_recursion_limit():
    x = Parameter(np.array([1.0]), name="x")
    y = x
    for _ in range(5000):
        y = autograd.add(y, x)
    autograd.sum_(y).backward()
    assert x.grad[0] == 5001.0


def test_broadcast_add_unbroadcasts_bias():
    w = Parameter(np.zeros((4, 3)), name="w")
    b = Parameter(np.zeros(3), name="b")
    autograd.sum_(autograd.add(w, b)).backward()
    assert np.array_equal(b.grad, np.full(3, 4.0))
    assert np.array_equal(w.grad, np.ones((4, 3)))


def test_matmul_requires_2d():
    a = Tensor(np.zeros((2, 3, 4)))
    b = Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        autograd.matmul(a, b)


def test_matmul_gradients():
    rng = np.random.default_rng(0)
    a = Parameter(rng.normal(size=(3, 4)), name="a")
    b = Parameter(rng.normal(size=(4, 2)), name="b")

    def loss():
        return autograd.sum_(autograd.mul(autograd.matmul(a, b), 0.5))

    assert numerics.gradient_check(loss, [a, b]) < 1e-6


def test_relu_zero_input_has_zero_grad():
    x = Parameter(np.array([-1.0, 0.0, 2.0]), name="x")
    autograd.sum_(autograd.relu(x)).backward()
    assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0]))


@pytest.mark.parametrize("op", [autograd.tanh, autograd.sigmoid, autograd.exp])
def test_elementwise_gradients(op):
    x = Parameter(np.random.default_rng(1).normal(size=(3, 2)), name="x")

    def loss():
        return autograd.sum_(op(x))

    assert numerics.gradient_check(loss, [x]) < 1e-6


def test_log_gradient():
    x = Parameter(np.array([0.5, 1.5, 4.0]), name="x")

    def loss():
        return autograd.sum_(autograd.log(x))

    assert numerics.gradient_check(loss, [x]) < 1e-6


def test_log_softmax_rows_normalize():
    x = Tensor(np.random.default_rng(2).normal(size=(4, 5)) * 10)
    out = autograd.log_softmax(x)
    sums = np.exp(out.data).sum(axis=-1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_log_softmax_shift_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4))
    a = autograd.log_softmax(Tensor(x)).data
    b = autograd.log_softmax(Tensor(x + 123.0)).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_log_softmax_gradient():
    x = Parameter(np.random.default_rng(4).normal(size=(3, 4)), name="x")
    w = np.random.default_rng(5).normal(size=(3, 4))

    def loss():
        return autograd.sum_(autograd.mul(autograd.log_softmax(x), Tensor(w)))

    assert numerics.gradient_check(loss, [x]) < 1e-6


def test_mean_gradient():
    x = Parameter(np.arange(8.0).reshape(2, 4), name="x")
    autograd.mean(x).backward()
    assert np.allclose(x.grad, np.full((2, 4), 1.0 / 8.0))


def test_reshape_gradient_restores_shape():
    x = Parameter(np.arange(6.0).reshape(2, 3), name="x")
    autograd.sum_(autograd.reshape(x, (3, 2))).backward()
    assert x.grad.shape == (2, 3)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_concat_splits_gradient():
    a = Parameter(np.zeros((2, 2)), name="a")
    b = Parameter(np.zeros((2, 3)), name="b")
    out = autograd.concat([a, b], axis=1)
    autograd.sum_(autograd.mul(out, Tensor(np.arange(10.0).reshape(2, 5)))).backward()
    assert np.array_equal(a.grad, np.array([[0.0, 1.0], [5.0, 6.0]]))
    assert np.array_equal(b.grad, np.array([[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]]))


def test_pick_rows_gradient_accumulates_repeats():
    x = Parameter(np.ones((3, 2)), name="x")
    out = autograd.pick_rows(x, [0, 0, 2])
    autograd.sum_(out).backward()
    assert np.array_equal(x.grad, np.array([[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]))


def test_take_rows_gradient():
    x = Parameter(np.ones((4, 2)), name="x")
    autograd.sum_(autograd.take_rows(x, 1, 3)).backward()
    want = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(x.grad, want)


def test_scatter_rows_roundtrip_and_gradient():
    x = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]), name="x")
    out = autograd.scatter_rows(x, [2, 0], 4)
    assert np.array_equal(out.data,
                          np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 2.0], [0.0, 0.0]]))
    autograd.sum_(autograd.mul(out, Tensor(np.arange(8.0).reshape(4, 2)))).backward()
    assert np.array_equal(x.grad, np.array([[4.0, 5.0], [0.0, 1.0]]))


def test_broadcast_rows_gradient_sums():
    v = Parameter(np.array([1.0, 2.0]), name="v")
    autograd.sum_(autograd.broadcast_rows(v, 3)).backward()
    assert np.array_equal(v.grad, np.array([3.0, 3.0]))


def test_repeat_last_expands_groups():
    v = Tensor(np.array([1.0, 2.0, 3.0]))
    out = autograd.repeat_last(v, 2)
    assert np.array_equal(out.data, np.array([1.0, 1.0, 2.0, 2.0, 3.0, 3.0]))


def test_repeat_last_gradient_sums_groups():
    v = Parameter(np.array([1.0, 2.0]), name="v")
    out = autograd.repeat_last(v, 3)
    autograd.sum_(autograd.mul(out, Tensor(np.arange(6.0)))).backward()
    assert np.array_equal(v.grad, np.array([0.0 + 1 + 2, 3.0 + 4 + 5]))


def test_no_grad_suppresses_graph():
    x = Parameter(np.ones(2), name="x")
    with autograd.no_grad():
        y = autograd.sum_(autograd.mul(x, x))
    assert y._parents == ()
    with pytest.raises(UsageError):
        y.backward()


def test_parameter_velocity_initialized():
    p = Parameter(np.ones((2, 2)), name="p")
    assert np.array_equal(p.velocity, np.zeros((2, 2)))


def test_float64_coercion():
    t = Tensor(np.array([1, 2, 3], dtype=np.int32))
    assert t.data.dtype == np.float64
