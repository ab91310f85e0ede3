import numpy as np
import pytest

from _oracles import conv2d_direct, gradcheck
from skycast import tensor as T
from skycast.model import NetworkConfig, build_network
from skycast.tensor import AdamState, ShapeError, Tensor

F64 = np.float64


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=grad, dtype=F64)


# --------------------------------------------------------------------------
# conv2d


def test_conv_center_of_ones_is_nine():
    x = Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=1)
    assert out.shape == (1, 1, 3, 3)
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0  # corner sees the zero padding


@pytest.mark.parametrize("size,stride,expected", [(150, 2, 75), (75, 2, 38), (5, 2, 3), (8, 1, 8)])
def test_conv_output_size(size, stride, expected):
    x = Tensor(np.zeros((1, 2, size, size)))
    out = T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(3)), stride)
    assert out.shape == (1, 3, expected, expected)


def test_conv_matches_nested_loops_32_filters():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(2, 4, 8, 8)), rng.normal(size=(32, 4, 3, 3)), rng.normal(size=32)
    for stride in (1, 2):
        out = T.conv2d(t64(x, False), t64(w, False), t64(b, False), stride).data
        assert np.max(np.abs(out - conv2d_direct(x, w, b, stride))) < 1e-6


def test_conv_float32_matches_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rng.random((1, 3, 7, 9)), rng.normal(size=(5, 3, 3, 3)) * 0.3, rng.normal(size=5)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), 2).data
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, conv2d_direct(x, w, b, 2), atol=1e-5)


@pytest.mark.parametrize(
    "xs,ws,bs,stride",
    [((1, 2, 4, 4), (3, 3, 3, 3), (3,), 1), ((1, 2, 4, 4), (3, 2, 5, 5), (3,), 1),
     ((1, 2, 4, 4), (3, 2, 3, 3), (2,), 1), ((2, 4, 4), (3, 2, 3, 3), (3,), 1),
     ((1, 2, 4, 4), (3, 2, 3, 3), (3,), 3)],
)
def test_conv_shape_errors(xs, ws, bs, stride):
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros(xs)), Tensor(np.zeros(ws)), Tensor(np.zeros(bs)), stride)


# --------------------------------------------------------------------------
# dense, relu, combine, reduce


def test_dense_identity_and_hand_example():
    x = np.arange(6.0).reshape(2, 3)
    out = T.dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)
    out = T.dense(Tensor([[1.0, 1.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[3.0, 7.0]])


def test_dense_matches_matmul_oracle():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(16, 32)), rng.normal(size=(8, 32)), rng.normal(size=8)
    out = T.dense(t64(x, False), t64(w, False), t64(b, False)).data
    ref = np.array([[sum(x[i, k] * w[j, k] for k in range(32)) + b[j] for j in range(8)] for i in range(16)])
    assert np.max(np.abs(out - ref)) < 1e-6


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        T.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))


def test_relu_forward_backward_and_idempotence():
    x = t64([-1.0, 0.0, 2.0])
    y = T.relu(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    T.backward(T.mean(T.mul(y, Tensor(np.full(3, 3.0), dtype=F64))))  # upstream ones into relu
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])
    r = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(T.relu(T.relu(Tensor(r))).data, T.relu(Tensor(r)).data)


def test_add_and_concat():
    x = t64(np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_array_equal(T.add(x, Tensor(np.zeros((3, 4)), dtype=F64)).data, x.data)
    assert T.concat(Tensor(np.zeros((5, 64))), Tensor(np.zeros((5, 16))), axis=1).shape == (5, 80)
    assert T.combine("concat", Tensor(np.zeros((5, 2))), Tensor(np.zeros((5, 3)))).shape == (5, 5)
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        T.concat(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))), axis=1)
    with pytest.raises(ValueError):
        T.combine("mul", x, x)


def test_add_backward_passes_upstream_verbatim():
    a, b = t64(np.zeros((2, 3))), t64(np.zeros((2, 3)))
    up = np.arange(6.0).reshape(2, 3)
    T.backward(T.mean(T.mul(T.add(a, b), Tensor(up * 6, dtype=F64))))
    np.testing.assert_allclose(a.grad, up)
    np.testing.assert_allclose(b.grad, up)


def test_reductions():
    assert float(T.reduce("mse", Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).data) == 0.0
    assert float(T.reduce("mse", Tensor([0.0]), Tensor([2.0])).data) == 4.0
    assert float(T.reduce("mean", Tensor(np.ones((7, 7)))).data) == 1.0
    with pytest.raises(ValueError):
        T.reduce("mse", Tensor([1.0]))
    with pytest.raises(ShapeError):
        T.mse(Tensor([1.0, 2.0]), Tensor([1.0]))


# --------------------------------------------------------------------------
# backward


def test_square_gradient():
    x = t64(3.0)
    T.backward(T.mul(x, x))
    assert x.grad.reshape(-1)[0] == 6.0


def test_backward_needs_scalar():
    x = t64(np.ones(3))
    with pytest.raises(ShapeError):
        T.backward(T.relu(x))


def test_shared_node_gradients_accumulate():
    x = t64([2.0])
    y = T.add(T.mul(x, x), x)  # x^2 + x
    T.backward(T.mean(y))
    assert float(x.grad[0]) == 5.0


def test_input_gradient_has_input_shape():
    net = build_network(NetworkConfig(input_size=33, filters_per_conv=2, init_seed=1)).astype(F64)
    img = t64(np.random.default_rng(0).random((2, 4, 33, 33)))
    loss = T.mse(net(img, Tensor(np.zeros((2, 8)), dtype=F64)), Tensor(np.ones((2, 1)), dtype=F64))
    T.backward(loss)
    assert img.grad.shape == img.shape


def test_no_grad_records_nothing():
    x = t64([1.0, -2.0])
    with T.no_grad():
        y = T.relu(x)
    assert not y.requires_grad and y._parents == ()


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradcheck(stride):
    rng = np.random.default_rng(10 + stride)
    x, w, b = t64(rng.normal(size=(2, 3, 5, 6))), t64(rng.normal(size=(4, 3, 3, 3))), t64(rng.normal(size=4))
    tgt = Tensor(rng.normal(size=(2, 4, -(-5 // stride), -(-6 // stride))), dtype=F64)
    err, checked, _ = gradcheck(lambda: T.mse(T.conv2d(x, w, b, stride), tgt), [x, w, b], rng, 6)
    assert checked == 16 and err < 1e-4


def test_gradcheck_elementwise_ops():
    rng = np.random.default_rng(5)
    a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(3, 4)))
    c = t64(rng.normal(size=(3, 2)))
    w, bias = t64(rng.normal(size=(5, 6))), t64(rng.normal(size=5))
    img = t64(rng.normal(size=(2, 3, 4, 4)))

    def loss():
        z = T.concat(T.mul(T.add(a, b), b), c, axis=1)
        z = T.relu(T.dense(z, w, bias))
        return T.add(T.mse(z, Tensor(np.ones((3, 5)), dtype=F64)),
                     T.mean(T.select_channel(img, 1)))

    err, checked, kinks = gradcheck(loss, [a, b, c, w, bias, img], rng, 4)
    assert checked + kinks == 24 and checked >= 18 and err < 1e-4


def test_network_gradcheck():
    rng = np.random.default_rng(7)
    cfg = NetworkConfig(input_size=33, filters_per_conv=2, cnn_dense=[6, 4], ann_widths=[4, 4], head_widths=[5, 3])
    net = build_network(cfg).astype(F64)
    img, meta = t64(rng.random((2, 4, 33, 33))), t64(rng.normal(size=(2, 8)))
    tgt = Tensor(rng.random((2, 1)), dtype=F64)
    err, checked, kinks = gradcheck(lambda: T.mse(net(img, meta), tgt), net.parameters() + [img, meta], rng, 2)
    assert checked >= 40 and err < 1e-4


# --------------------------------------------------------------------------
# optimizers


def test_adam_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0])
    before = p.data.copy()
    T.adam_step([p], [np.zeros(2, dtype=np.float32)], AdamState())
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_is_about_lr():
    p = Tensor([1.0], dtype=F64)
    st = T.adam_step([p], [np.array([0.5])], AdamState(learning_rate=1e-3))
    assert st.step == 1
    assert abs((1.0 - p.data[0]) - 1e-3) < 1e-9


def test_adam_minimizes_quadratic():
    x = Tensor([0.0], requires_grad=True, dtype=F64)
    st = AdamState(learning_rate=1e-2)
    for _ in range(2000):
        x.zero_grad()
        d = T.add(x, Tensor([-2.0], dtype=F64))
        T.backward(T.mean(T.mul(d, d)))
        T.adam_step([x], [x.grad], st)
    assert abs(x.data[0] - 2.0) < 1e-2


def test_adam_rejects_nan_and_shape_mismatch():
    p = Tensor([1.0])
    with pytest.raises(FloatingPointError):
        T.adam_step([p], [np.array([np.nan], dtype=np.float32)], AdamState())
    with pytest.raises(ShapeError):
        T.adam_step([p], [np.zeros(2, dtype=np.float32)], AdamState())
    with pytest.raises(ValueError):
        AdamState(learning_rate=0.0)


def test_sgd_step():
    p = Tensor([1.0, 2.0], dtype=F64)
    T.sgd_step([p], [np.array([1.0, -1.0])], 0.1)
    np.testing.assert_allclose(p.data, [0.9, 2.1])
