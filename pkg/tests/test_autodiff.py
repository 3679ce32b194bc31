import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from galseg import autodiff as ad
from galseg.autodiff import Param, ShapeError, Tape, Tensor

EPS = 1e-6  # see galseg.checks.SUITE_EPS


def t64(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def projected(fn, out_shape, seed=0):
    proj = np.random.default_rng(seed).standard_normal(out_shape)
    return lambda *xs: ad.sum(ad.elementwise_mul(fn(*xs), Tensor(proj)))


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    out = ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_row_by_column():
    assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    err = ad.grad_check(projected(ad.matmul, (3, 2)), [t64(rng, 3, 4), t64(rng, 4, 2)])
    assert err <= 1e-4


# ---------------------------------------------------------------- conv2d

def test_conv2d_zero_input_gives_zero():
    rng = np.random.default_rng(1)
    out = ad.conv2d(Tensor(np.zeros((5, 6, 3))), t64(rng, 3, 3, 3, 2))
    assert out.shape == (5, 6, 2)
    assert not out.data.any()


def test_conv2d_single_pixel_uses_centre_tap():
    rng = np.random.default_rng(2)
    x, k = t64(rng, 1, 1, 3), t64(rng, 3, 3, 3, 4)
    out = ad.conv2d(x, k)
    np.testing.assert_allclose(out.data[0, 0], x.data[0, 0] @ k.data[1, 1], rtol=1e-12)


@pytest.mark.parametrize("h,w,stride,expected", [(5, 6, 1, (5, 6)), (5, 6, 2, (3, 3)), (8, 8, 2, (4, 4))])
def test_conv2d_output_size(h, w, stride, expected):
    out = ad.conv2d(Tensor(np.ones((h, w, 1))), Tensor(np.ones((3, 3, 1, 1))), stride)
    assert out.shape[:2] == expected


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x, k = rng.standard_normal((4, 5, 2)), rng.standard_normal((3, 3, 2, 3))
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    for stride in (1, 2):
        out = ad.conv2d(Tensor(x), Tensor(k), stride).data
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                patch = xp[i * stride:i * stride + 3, j * stride:j * stride + 3]
                np.testing.assert_allclose(out[i, j], np.einsum("abc,abcd->d", patch, k), atol=1e-12)


def test_conv2d_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradcheck(stride):
    rng = np.random.default_rng(4)
    x, k = t64(rng, 5, 6, 3), t64(rng, 3, 3, 3, 2)
    shape = ad.conv2d(x, k, stride).shape
    err = ad.grad_check(projected(lambda a, b: ad.conv2d(a, b, stride), shape), [x, k])
    assert err <= 1e-4


# ---------------------------------------------------------------- small ops

def test_relu_values():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]


def test_concat_channels_orders_first_argument_first():
    a, b = Tensor(np.zeros((2, 3, 2))), Tensor(np.ones((2, 3, 1)))
    out = ad.concat_channels(a, b)
    assert out.shape == (2, 3, 3)
    assert not out.data[..., :2].any() and (out.data[..., 2] == 1).all()


def test_concat_channels_rejects_mismatched_spatial():
    with pytest.raises(ShapeError):
        ad.concat_channels(Tensor(np.zeros((2, 3, 1))), Tensor(np.zeros((3, 3, 1))))


def test_bilinear_upsample_preserves_constant():
    out = ad.bilinear_upsample(Tensor(np.full((3, 4, 2), 0.7)), 2)
    assert out.shape == (6, 8, 2)
    np.testing.assert_allclose(out.data, 0.7, rtol=0, atol=1e-15)


def test_elementwise_mul_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.elementwise_mul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))


def test_mean_rows_groups():
    out = ad.mean_rows(Tensor([[1, 0], [0, 1], [1, 0], [0, 1]]), 4)
    assert out.data.tolist() == [[0.5, 0.5]]


def test_reshape_rejects_wrong_size():
    with pytest.raises(ShapeError):
        ad.reshape(Tensor(np.ones((2, 3))), (4,))


def test_tensor_rejects_rank_five_and_empty_dims():
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 1, 1, 1, 1)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((0, 2)))


# ---------------------------------------------------------------- loss

def test_cross_entropy_uniform_logits_is_ln2():
    loss = ad.softmax_cross_entropy(Tensor(np.zeros((3, 4, 2))), np.zeros((3, 4), dtype=int))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_saturated():
    loss = ad.softmax_cross_entropy(Tensor([[[1000.0, 0.0]]]), np.array([[0]]))
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(Tensor(np.zeros((2, 2, 2))), np.array([[0, 1], [2, 0]]))


def test_cross_entropy_gradcheck():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 2, size=(4, 4))
    assert ad.grad_check(lambda x: ad.softmax_cross_entropy(x, labels), [t64(rng, 4, 4, 2)]) <= 1e-4


def test_cross_entropy_backward_formula():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, 3, 2)), requires_grad=True)
    labels = rng.integers(0, 2, size=(2, 3))
    with Tape() as tape:
        loss = ad.softmax_cross_entropy(x, labels)
    tape.backward(loss)
    p = np.exp(x.data) / np.exp(x.data).sum(axis=2, keepdims=True)
    onehot = np.eye(2)[labels]
    np.testing.assert_allclose(x.grad, (p - onehot) / 6, atol=1e-15)


# ---------------------------------------------------------------- grad_check itself

def test_grad_check_on_sum_is_exact():
    rng = np.random.default_rng(7)
    assert ad.grad_check(ad.sum, [t64(rng, 3, 4)]) < 1e-9


def test_grad_check_detects_wrong_backward():
    def bad_square(x):
        # forward x*x but backward claims 3x
        return ad._emit("bad_square", (x,), x.data * x.data, lambda g: (3 * g * x.data,))

    rng = np.random.default_rng(8)
    assert ad.grad_check(lambda x: ad.sum(bad_square(x)), [t64(rng, 4)]) > 1e-2


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ShapeError):
        ad.grad_check(ad.relu, [Tensor(np.ones(3))])


def test_grad_check_rejects_float32():
    with pytest.raises(TypeError):
        ad.grad_check(ad.sum, [Tensor(np.ones(3, dtype=np.float32))])


# ---------------------------------------------------------------- optimiser

def test_sgdm_plain_step():
    p = Param(np.array([1.0, 2.0]))
    p.grad[...] = [0.5, -1.0]
    ad.sgdm_step([p], lr=1.0, momentum=0.0)
    assert p.data.tolist() == [0.5, 3.0]
    assert not p.grad.any()


def test_sgdm_zero_gradient_is_noop():
    p = Param(np.array([1.0, 2.0]))
    ad.sgdm_step([p], lr=0.1, momentum=0.9)
    assert p.data.tolist() == [1.0, 2.0]


def test_sgdm_momentum_two_steps():
    # v1 = g, v2 = 0.9 g + g: total decrease 2.9 g
    g = np.array([0.25, -2.0])
    p = Param(np.zeros(2))
    for _ in range(2):
        p.grad[...] = g
        ad.sgdm_step([p], lr=1.0, momentum=0.9)
    np.testing.assert_allclose(-p.data, 2.9 * g, rtol=1e-15)


# ---------------------------------------------------------------- tape properties

def _small_graph(x, w):
    h = ad.relu(ad.matmul(x, w))
    return ad.sum(ad.elementwise_mul(h, h))


def test_tape_is_topological_and_backward_visits_each_node_once():
    rng = np.random.default_rng(9)
    x, w = t64(rng, 3, 4), Param(rng.standard_normal((4, 2)))
    with Tape() as tape:
        out = _small_graph(x, w)
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert id(inp) in produced or inp is w or inp is x
        produced.add(id(node.output))
    visits = []
    for i, node in enumerate(tape.nodes):
        orig = node.backward
        node.backward = (lambda f, k: lambda g: (visits.append(k), f(g))[1])(orig, i)
    tape.backward(out)
    assert visits == list(range(len(tape.nodes)))[::-1]


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(10)
        x, w = Tensor(rng.standard_normal((3, 4))), Param(rng.standard_normal((4, 2)))
        with Tape() as tape:
            out = _small_graph(x, w)
        tape.backward(out)
        return out.data.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_adjoint_linearity():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 4))
    w1, w2 = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))

    def grad_of(fn):
        xt = Tensor(x.copy(), requires_grad=True)
        with Tape() as tape:
            out = fn(xt)
        tape.backward(out)
        return xt.grad

    f = lambda xt: ad.sum(ad.relu(ad.matmul(xt, Tensor(w1))))
    g = lambda xt: ad.sum(ad.elementwise_mul(ad.matmul(xt, Tensor(w2)), ad.matmul(xt, Tensor(w2))))
    both = grad_of(lambda xt: ad.add(f(xt), g(xt)))
    np.testing.assert_allclose(both, grad_of(f) + grad_of(g), rtol=0, atol=1e-10)


def test_no_tape_records_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    out = ad.relu(x)
    assert not out.requires_grad


# ---------------------------------------------------------------- randomized gradchecks

dims = st.integers(min_value=1, max_value=6)
even = st.sampled_from([2, 4, 6])


@settings(max_examples=15, deadline=None)
@given(m=dims, k=dims, n=dims, seed=st.integers(0, 2**16))
def test_random_matmul_gradcheck(m, k, n, seed):
    rng = np.random.default_rng(seed)
    assert ad.grad_check(projected(ad.matmul, (m, n), seed), [t64(rng, m, k), t64(rng, k, n)], EPS) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(h=dims, w=dims, cin=dims, cout=dims, stride=st.sampled_from([1, 2]), seed=st.integers(0, 2**16))
def test_random_conv_gradcheck(h, w, cin, cout, stride, seed):
    rng = np.random.default_rng(seed)
    x, k = t64(rng, h, w, cin), t64(rng, 3, 3, cin, cout)
    shape = ad.conv2d(x, k, stride).shape
    assert ad.grad_check(projected(lambda a, b: ad.conv2d(a, b, stride), shape, seed), [x, k], EPS) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(h=dims, w=dims, c=dims, seed=st.integers(0, 2**16))
def test_random_elementwise_gradchecks(h, w, c, seed):
    rng = np.random.default_rng(seed)
    shape = (h, w, c)
    for fn, nargs, out_shape in [
        (ad.relu, 1, shape),
        (ad.elementwise_mul, 2, shape),
        (ad.add, 2, shape),
        (ad.sub, 2, shape),
        (lambda x: ad.bilinear_upsample(x, 2), 1, (2 * h, 2 * w, c)),
        (lambda a, b: ad.concat_channels(a, b), 2, (h, w, 2 * c)),
        (lambda x: ad.reshape(x, (h * w, c)), 1, (h * w, c)),
    ]:
        inputs = [t64(rng, *shape) for _ in range(nargs)]
        assert ad.grad_check(projected(fn, out_shape, seed), inputs, EPS) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(rows=dims, c=dims, seed=st.integers(0, 2**16))
def test_random_row_ops_gradcheck(rows, c, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, rows, size=2 * rows)
    b = t64(rng, c)
    assert ad.grad_check(projected(lambda x: ad.gather_rows(x, idx), (2 * rows, c), seed),
                         [t64(rng, rows, c)], EPS) <= 1e-4
    assert ad.grad_check(projected(lambda x: ad.mean_rows(x, 4), (rows, c), seed),
                         [t64(rng, 4 * rows, c)], EPS) <= 1e-4
    assert ad.grad_check(projected(ad.add_bias, (rows, c), seed), [t64(rng, rows, c), b], EPS) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(h=dims, w=dims, k=st.integers(2, 6), seed=st.integers(0, 2**16))
def test_random_cross_entropy_gradcheck(h, w, k, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=(h, w))
    assert ad.grad_check(lambda x: ad.softmax_cross_entropy(x, labels), [t64(rng, h, w, k)], EPS) <= 1e-4
