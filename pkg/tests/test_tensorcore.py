import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqcl import ops
from freqcl.errors import DegenerateVarianceError, GraphError, ShapeError
from freqcl.nn import Conv2d, Linear
from freqcl.optim import SGD, sgd_step
from freqcl.tensor import Parameter, Tensor, default_dtype, get_default_dtype, no_grad, topological_order

from gradcheck import probe_gradients, weighted_sum


def naive_conv2d(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(n):
        for o in range(cout):
            for r in range(oh):
                for c in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ci, r * stride + u, c * stride + v] * w[o, ci, u, v]
                    out[i, o, r, c] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


# conv2d

def test_conv_all_ones_gives_nine():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_scalar_kernel_scales():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = ops.conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)))
    np.testing.assert_array_equal(out.data[0, 0], [[2, 4], [6, 8]])


def test_conv_matches_loop_oracle(f64, rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    assert out.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 2, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 0, 1), (2, 1, 3), (3, 2, 2)])
def test_conv_output_size_formula(stride, padding, k, rng):
    x = Tensor(rng.standard_normal((1, 2, 7, 9)))
    out = ops.conv2d(x, Tensor(rng.standard_normal((5, 2, k, k))), stride=stride, padding=padding)
    assert out.shape == (1, 5, (7 + 2 * padding - k) // stride + 1, (9 + 2 * padding - k) // stride + 1)


def test_conv_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


# linear

def test_linear_identity():
    out = ops.linear(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[1.0, 0.0]])


def test_linear_hand_value():
    out = ops.linear(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]), Tensor([1.0]))
    assert out.data.tolist() == [[12.0]]


def test_linear_matches_matmul_oracle(f64, rng):
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((3, 7))
    b = rng.standard_normal(3)
    out = ops.linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, naive_matmul(x, w.T) + b, rtol=0, atol=1e-12)


def test_linear_dimension_mismatch():
    with pytest.raises(ShapeError):
        ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


# batchnorm

def _bn(x, weight=1.0, bias=0.0, training=True, eps=1e-5, rm=None, rv=None):
    c = x.shape[1]
    rm = np.zeros(c) if rm is None else rm
    rv = np.ones(c) if rv is None else rv
    return ops.batchnorm2d(Tensor(x), Tensor(np.full(c, weight)), Tensor(np.full(c, bias)), rm, rv, training, eps=eps)


def test_batchnorm_two_values(f64):
    out = _bn(np.array([1.0, 3.0]).reshape(2, 1, 1, 1), eps=0.0)
    np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0])


def test_batchnorm_zero_scale_gives_shift(rng):
    out = _bn(rng.standard_normal((4, 3, 2, 2)), weight=0.0, bias=0.7)
    np.testing.assert_allclose(out.data, 0.7)


def test_batchnorm_eval_uses_running_stats(f64, rng):
    x = rng.standard_normal((3, 2, 4, 4))
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    w, b = rng.standard_normal(2), rng.standard_normal(2)
    out = ops.batchnorm2d(Tensor(x), Tensor(w), Tensor(b), rm.copy(), rv.copy(), training=False)
    expect = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    expect = expect * w[None, :, None, None] + b[None, :, None, None]
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_batchnorm_running_stats_update(f64, rng):
    x = rng.standard_normal((4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    _bn(x, rm=rm, rv=rv)
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(rm, 0.1 * mean)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * var)


def test_batchnorm_single_element_channel():
    with pytest.raises(DegenerateVarianceError):
        _bn(np.ones((1, 2, 1, 1)))


def test_batchnorm_single_element_allowed_in_eval():
    out = _bn(np.ones((1, 2, 1, 1)), training=False)
    assert out.shape == (1, 2, 1, 1)


# elementwise and reductions

def test_relu_example():
    assert ops.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_cross_entropy_uniform_is_ln2():
    loss = ops.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0])
    assert loss.item() == pytest.approx(math.log(2), abs=1e-7)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_cross_entropy_gradient_is_softmax_minus_onehot(f64):
    z = Tensor(np.array([[1.0, 2.0, 0.5]]), requires_grad=True)
    ops.softmax_cross_entropy(z, [1]).backward()
    p = np.exp(z.data) / np.exp(z.data).sum()
    np.testing.assert_allclose(z.grad, p - np.array([[0, 1, 0]]), atol=1e-12)


def test_mse_example():
    assert ops.mse(Tensor([1.0, 2.0]), Tensor([1.0, 4.0])).item() == 2.0


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        ops.concat_channels([Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 3)))])


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))


def test_global_avg_pool_values(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_allclose(ops.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)), rtol=1e-6)


# graph

def test_backward_sum_wx_gives_x():
    x = np.array([1.0, -2.0, 3.0])
    w = Parameter(np.array([0.5, 0.5, 0.5]))
    (w * Tensor(x)).sum().backward()
    np.testing.assert_allclose(w.grad, x)


def test_backward_requires_scalar():
    w = Parameter(np.ones(3))
    with pytest.raises(GraphError):
        (w * 2.0).backward()


def test_topological_order_inputs_first():
    a = Parameter(np.ones(2))
    b = a * 2.0
    c = b + a
    d = c.sum()
    order = topological_order(d)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]


def test_shared_subexpression_accumulates():
    a = Parameter(np.array([3.0]))
    b = a * a
    (b + b).sum().backward()
    np.testing.assert_allclose(a.grad, [12.0])


def test_no_grad_records_nothing():
    a = Parameter(np.ones(2))
    with no_grad():
        b = a * 2.0
    assert not b.requires_grad and b._parents == ()


def test_default_dtype_context():
    assert get_default_dtype() == np.float32
    with default_dtype("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_is_finite_detects_nan():
    assert not Tensor([1.0, np.nan]).is_finite()
    assert Tensor([1.0, 2.0]).is_finite()


def test_graph_determinism(rng):
    x = rng.standard_normal((4, 5)).astype(np.float32)
    losses = []
    for _ in range(2):
        lin = Linear(5, 3, rng=7)
        losses.append(ops.softmax_cross_entropy(lin(Tensor(x)), [0, 1, 2, 0]).item())
    assert losses[0] == losses[1]


# gradients against finite differences (64-bit)

def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def test_grad_conv2d(f64, rng):
    x, w, b = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))
    r = rng.standard_normal((2, 4, 3, 3))
    err = probe_gradients(lambda: weighted_sum(ops.conv2d(x, w, b, stride=2, padding=1), r), [x, w, b])
    assert err < 1e-4


def test_grad_linear(f64, rng):
    x, w, b = _leaf(rng, (5, 7)), _leaf(rng, (3, 7)), _leaf(rng, (3,))
    r = rng.standard_normal((5, 3))
    assert probe_gradients(lambda: weighted_sum(ops.linear(x, w, b), r), [x, w, b]) < 1e-4


@pytest.mark.parametrize("training", [True, False])
def test_grad_batchnorm(f64, rng, training):
    x, w, b = _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (3,)), _leaf(rng, (3,))
    rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    r = rng.standard_normal((4, 3, 3, 3))

    def loss():
        return weighted_sum(ops.batchnorm2d(x, w, b, rm.copy(), rv.copy(), training), r)

    assert probe_gradients(loss, [x, w, b]) < 1e-4


def test_grad_relu(f64, rng):
    # keep values away from the kink
    data = rng.uniform(0.1, 1.0, (3, 8)) * rng.choice([-1, 1], (3, 8))
    x = Tensor(data, requires_grad=True)
    r = rng.standard_normal((3, 8))
    assert probe_gradients(lambda: weighted_sum(ops.relu(x), r), [x]) < 1e-4


def test_grad_add_concat_pool(f64, rng):
    a, b = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (2, 3, 4, 4))
    c = _leaf(rng, (2, 2, 4, 4))
    r = rng.standard_normal((2, 5))

    def loss():
        return weighted_sum(ops.global_avg_pool(ops.concat_channels([ops.add(a, b), c])), r)

    assert probe_gradients(loss, [a, b, c]) < 1e-4


def test_grad_cross_entropy_and_mask(f64, rng):
    z = _leaf(rng, (6, 5))
    labels = np.array([0, 1, 2, 3, 4, 0])
    assert probe_gradients(lambda: ops.softmax_cross_entropy(z, labels), [z]) < 1e-4
    mask = np.array([True, False, True, False, True])
    z2 = _leaf(rng, (3, 5))
    assert probe_gradients(lambda: ops.softmax_cross_entropy(z2, [0, 2, 4], mask), [z2]) < 1e-4


def test_grad_mse(f64, rng):
    a, b = _leaf(rng, (4, 3)), _leaf(rng, (4, 3))
    assert probe_gradients(lambda: ops.mse(a, b), [a, b]) < 1e-4


def test_grad_two_layer_net(f64, rng):
    conv = Conv2d(2, 3, 3, padding=1, bias=True, rng=1)
    lin = Linear(3, 4, rng=2)
    x = Tensor(rng.uniform(-1, 1, (3, 2, 5, 5)))
    labels = np.array([0, 3, 1])

    def loss():
        h = ops.global_avg_pool(ops.relu(conv(x)))
        return ops.softmax_cross_entropy(lin(h), labels)

    params = conv.parameters() + lin.parameters()
    assert probe_gradients(loss, params, h=1e-6) < 1e-4


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1, 1)), arrays(np.float64, (3, 4), elements=st.floats(-1, 1)))
def test_mse_gradient_property(a, b):
    with default_dtype("float64"):
        ta, tb = Tensor(a.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)
        ops.mse(ta, tb).backward()
        np.testing.assert_allclose(ta.grad, 2 * (a - b) / a.size, atol=1e-15)
        np.testing.assert_allclose(tb.grad, -ta.grad)


# sgd

def _param(value, grad):
    p = Parameter(np.array([value]), dtype=np.float64)
    p.grad = np.array([grad])
    return p


def test_sgd_plain_step():
    p = _param(1.0, 1.0)
    sgd_step([p], lr=0.1)
    assert p.data[0] == pytest.approx(0.9)


def test_sgd_momentum_two_steps():
    p = _param(0.0, 1.0)
    buffers = {}
    sgd_step([p], lr=0.1, momentum=0.9, buffers=buffers)
    assert p.data[0] == pytest.approx(-0.1)
    sgd_step([p], lr=0.1, momentum=0.9, buffers=buffers)
    assert p.data[0] == pytest.approx(-0.29)


def test_sgd_pure_decay():
    p = _param(1.0, 0.0)
    sgd_step([p], lr=0.1, weight_decay=0.1)
    assert p.data[0] == pytest.approx(0.99)


def test_sgd_requires_positive_lr():
    with pytest.raises(ValueError):
        sgd_step([_param(1.0, 1.0)], lr=0.0)


def test_sgd_skips_frozen():
    p = _param(1.0, 1.0)
    p.requires_grad = False
    sgd_step([p], lr=0.1)
    assert p.data[0] == 1.0


def test_sgd_optimizer_momentum_persists():
    p = _param(0.0, 1.0)
    opt = SGD([p], lr=0.1, momentum=0.9)
    opt.step()
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(-0.29)
