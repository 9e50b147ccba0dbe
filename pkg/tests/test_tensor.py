import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landsharp import tensor as T
from _gradcheck import OP_KINDS, SEEDS, check_op


@pytest.mark.parametrize("kind", OP_KINDS)
@pytest.mark.parametrize("seed", list(SEEDS))
def test_gradient_matches_finite_differences(kind, seed):
    assert check_op(kind, seed) < 1e-3


def test_relu_values():
    out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0, 0, 2])


def test_identity_kernel_conv():
    x = T.Tensor(np.ones((1, 4, 4, 1), np.float32))
    w = T.Tensor(np.ones((1, 1, 1, 1), np.float32))
    out = T.conv2d(x, w)
    assert out.shape == (1, 4, 4, 1)
    np.testing.assert_array_equal(out.data, 1.0)


@pytest.mark.parametrize("c", [1, 3, 8, 16])
def test_conv_keeps_spatial_shape_and_matches_direct_sum(c):
    rng = np.random.default_rng(c)
    x = rng.standard_normal((2, 5, 7, c))
    w = rng.standard_normal((4, c, 3, 3))
    out = T.conv2d(T.Tensor(x), T.Tensor(w)).data
    assert out.shape == (2, 5, 7, 4)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for i in range(3):
        for j in range(3):
            ref += np.einsum("nhwc,oc->nhwo", xp[:, i:i + 5, j:j + 7], w[:, :, i, j])
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-10)


def test_matmul_identity():
    out = T.matmul(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_square_sum_gradient():
    theta = T.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    T.backward(T.tsum(T.mul(theta, theta)))
    np.testing.assert_array_equal(theta.grad, [2.0, -4.0])


def test_repeated_backward_accumulates():
    theta = T.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    for _ in range(2):
        T.backward(T.tsum(T.mul(theta, theta)))
    np.testing.assert_array_equal(theta.grad, [4.0, -8.0])
    theta.zero_grad()
    assert theta.grad is None


def test_uniform_logits_cross_entropy_is_log_classes():
    loss = T.softmax_cross_entropy(T.Tensor(np.zeros((3, 10))), np.array([0, 4, 9]))
    assert loss.item() == pytest.approx(math.log(10), abs=1e-12)


def test_non_scalar_backward_rejected():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.GradError):
        T.backward(T.mul(x, x))


def test_untracked_backward_rejected():
    with pytest.raises(T.GradError):
        T.backward(T.tsum(T.Tensor(np.ones(3))))
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.tsum(x)
    with pytest.raises(T.GradError):
        T.backward(y)


@pytest.mark.parametrize("kind,inputs", [
    ("matmul", [np.ones((2, 3)), np.ones((4, 2))]),
    ("conv2d", [np.ones((1, 4, 4, 2)), np.ones((3, 1, 3, 3))]),
    ("bias", [np.ones((2, 3)), np.ones(4)]),
    ("mul", [np.ones((2, 3)), np.ones((3, 2))]),
])
def test_shape_mismatch_names_the_op(kind, inputs):
    with pytest.raises(T.ShapeError) as exc:
        T.forward_op(kind, [T.Tensor(a) for a in inputs])
    assert kind.split("2d")[0] in str(exc.value)


def test_unknown_op_kind():
    with pytest.raises(ValueError, match="unknown op"):
        T.forward_op("softplus", [T.Tensor(np.ones(2))])


def test_zero_sized_tensor_rejected():
    with pytest.raises(T.ShapeError):
        T.Tensor(np.ones((0, 3)))


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(T.Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_random_three_layer_network_gradient():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 5))
    labels = rng.integers(0, 3, 6)
    ws = [rng.standard_normal(s) for s in [(8, 5), (8, 8), (3, 8)]]

    def loss_of(weights, track):
        ts = [T.Tensor(w.copy(), requires_grad=track) for w in weights]
        h = T.Tensor(x)
        for k, t in enumerate(ts):
            h = T.linear(h, t)
            if k < 2:
                h = T.relu(h)
        return T.softmax_cross_entropy(h, labels), ts

    loss, ts = loss_of(ws, True)
    T.backward(loss)
    h = 1e-3
    for k, w in enumerate(ws):
        for idx in np.ndindex(w.shape):
            plus = [v.copy() for v in ws]
            minus = [v.copy() for v in ws]
            plus[k][idx] += h
            minus[k][idx] -= h
            fd = (loss_of(plus, False)[0].item() - loss_of(minus, False)[0].item()) / (2 * h)
            assert abs(ts[k].grad[idx] - fd) <= 1e-3 * max(1.0, abs(fd))


def test_batchnorm_train_updates_running_stats_and_eval_uses_them():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3, 3, 2)).astype(np.float32) * 2 + 1
    rm, rv = np.zeros(2, np.float32), np.ones(2, np.float32)
    g, b = T.Tensor(np.ones(2, np.float32)), T.Tensor(np.zeros(2, np.float32))
    out = T.batchnorm2d(T.Tensor(x), g, b, rm, rv, training=True)
    flat = x.reshape(-1, 2).astype(np.float64)
    np.testing.assert_allclose(rm, 0.1 * flat.mean(0), rtol=1e-5)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * flat.var(0, ddof=1), rtol=1e-5)
    np.testing.assert_allclose(out.data.reshape(-1, 2).mean(0), 0, atol=1e-5)
    before = (rm.copy(), rv.copy())
    ev = T.batchnorm2d(T.Tensor(x), g, b, rm, rv, training=False)
    np.testing.assert_array_equal(rm, before[0])
    np.testing.assert_allclose(ev.data, (x - rm) / np.sqrt(rv + 1e-5), rtol=1e-5, atol=1e-6)


def test_pooling_shapes():
    x = T.Tensor(np.arange(2 * 5 * 7 * 3, dtype=np.float64).reshape(2, 5, 7, 3))
    assert T.mean_pool2x2(x).shape == (2, 2, 3, 3)
    assert T.global_pool(x).shape == (2, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 5, 4)).astype(np.float32)
    w = rng.standard_normal((3, 4, 3, 3)).astype(np.float32)
    a = T.conv2d(T.Tensor(x), T.Tensor(w)).data
    b = T.conv2d(T.Tensor(x.copy()), T.Tensor(w.copy())).data
    assert a.tobytes() == b.tobytes()
