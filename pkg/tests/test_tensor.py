import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from heatlens import tensor as T
from heatlens.tensor import NonFiniteError, ShapeError, Tensor


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), dtype="f64", requires_grad=grad)


def naive_conv(x, w, stride=1, padding=0):
    cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, Ho, Wo))
    for o in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                for c in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            out[o, i, j] += xp[c, i * stride + a, j * stride + b] * w[o, c, a, b]
    return out


# -- elementwise ------------------------------------------------------------


def test_exp_of_zeros_is_ones():
    assert np.array_equal(T.exp(T.zeros((2, 2))).data, np.ones((2, 2)))


def test_relu_values():
    assert np.array_equal(T.relu(t64([-1.0, 2.0])).data, [0.0, 2.0])


def test_product_rule_gradient():
    a, b = t64([1.0, 2.0], grad=True), t64([3.0, 4.0])
    (g,) = T.backward(T.tsum(T.mul(a, b)), [a])
    assert np.array_equal(g, [3.0, 4.0])


@pytest.mark.parametrize("op", ["add", "sub", "mul", "exp", "relu", "scale"])
def test_elementwise_dispatch(op):
    a = t64([[0.5, -1.0], [2.0, 0.0]])
    if op == "exp":
        out = T.elementwise(op, a)
        ref = np.exp(a.data)
    elif op == "relu":
        out = T.elementwise(op, a)
        ref = np.maximum(a.data, 0)
    elif op == "scale":
        out = T.elementwise(op, a, 3.0)
        ref = 3.0 * a.data
    else:
        b = t64([[1.0, 2.0], [3.0, 4.0]])
        out = T.elementwise(op, a, b)
        ref = {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op](a.data, b.data)
    assert np.array_equal(out.data, ref)


def test_trailing_and_scalar_broadcast_allowed():
    a = t64(np.ones((2, 3, 4)))
    assert T.add(a, t64(np.arange(4.0))).shape == (2, 3, 4)
    assert T.add(a, 2.0).shape == (2, 3, 4)


def test_two_sided_broadcast_rejected():
    with pytest.raises(ShapeError, match="broadcast"):
        T.add(t64(np.ones((3, 1))), t64(np.ones((1, 4))))


def test_incompatible_extents_rejected():
    with pytest.raises(ShapeError, match="cannot broadcast"):
        T.mul(t64(np.ones((2, 3))), t64(np.ones((2, 4))))


def test_broadcast_gradient_is_summed():
    a = t64(np.ones((2, 3)), grad=True)
    b = t64(np.ones(3), grad=True)
    ga, gb = T.backward(T.tsum(T.add(a, b)), [a, b])
    assert np.array_equal(gb, [2.0, 2.0, 2.0])
    assert ga.shape == (2, 3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_is_an_error():
    with pytest.raises(NonFiniteError):
        T.exp(t64([1000.0]))
    with pytest.raises(NonFiniteError):
        T.div(t64([1.0]), t64([0.0]))


def test_tensors_are_immutable():
    x = t64([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0


def test_constructor_copies_input():
    src = np.array([1.0, 2.0])
    x = Tensor(src)
    src[0] = 9.0
    assert x.data[0] == 1.0


def test_unknown_dtype_rejected():
    with pytest.raises(ValueError):
        Tensor([1.0], dtype="f16")


# -- matmul -----------------------------------------------------------------


def test_matmul_identity(rng):
    x = rng.normal(size=(3, 3))
    assert np.allclose(T.matmul(t64(np.eye(3)), t64(x)).data, x, atol=0, rtol=0)


def test_matmul_hand_value():
    out = T.matmul(t64([[1, 2], [3, 4]]), t64([[5], [6]]))
    assert np.array_equal(out.data, [[17], [39]])


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


def test_matmul_gradients_closed_form(rng):
    a, b = t64(rng.normal(size=(3, 4)), True), t64(rng.normal(size=(4, 2)), True)
    g = rng.normal(size=(3, 2))
    ga, gb = T.backward(T.tsum(T.mul(T.matmul(a, b), t64(g))), [a, b])
    assert np.allclose(ga, g @ b.data.T, atol=1e-14)
    assert np.allclose(gb, a.data.T @ g, atol=1e-14)


# -- conv2d -----------------------------------------------------------------


def test_conv_unit_1x1_is_identity(rng):
    x = rng.normal(size=(1, 5, 6))
    out = T.conv2d(t64(x), t64(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_box_on_constant_uses_zero_padding():
    c = 0.7
    x = t64(np.full((1, 5, 5), c))
    out = T.conv2d(x, t64(np.full((1, 1, 3, 3), 1 / 9)), padding=1).data[0]
    assert np.allclose(out[1:-1, 1:-1], c, atol=1e-15)
    # border cells see only their in-image taps: edges 6/9, corners 4/9
    assert np.isclose(out[0, 2], c * 6 / 9)
    assert np.isclose(out[0, 0], c * 4 / 9)


def test_conv_matches_nested_loops(rng):
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(2, 1, 3, 3))
    out = T.conv2d(t64(x), t64(w), padding=1).data
    assert np.max(np.abs(out - naive_conv(x, w, padding=1))) < 1e-12


@pytest.mark.parametrize("stride,padding,k", [(2, 0, 2), (2, 1, 3), (1, 0, 1), (3, 0, 3)])
def test_conv_strided_matches_nested_loops(rng, stride, padding, k):
    x = rng.normal(size=(3, 7, 7))
    w = rng.normal(size=(2, 3, k, k))
    out = T.conv2d(t64(x), t64(w), stride=stride, padding=padding).data
    assert np.max(np.abs(out - naive_conv(x, w, stride, padding))) < 1e-12


def test_conv_batched_equals_per_item(rng):
    x = rng.normal(size=(3, 2, 5, 5))
    w = rng.normal(size=(4, 2, 3, 3))
    batched = T.conv2d(t64(x), t64(w), padding=1).data
    for i in range(3):
        assert np.array_equal(batched[i], T.conv2d(t64(x[i]), t64(w), padding=1).data)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError, match="larger"):
        T.conv2d(t64(np.ones((1, 2, 2))), t64(np.ones((1, 1, 3, 3))))


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(t64(np.ones((2, 4, 4))), t64(np.ones((1, 3, 1, 1))))


# -- pixel shuffle ----------------------------------------------------------


def test_pixel_shuffle_r1_identity(rng):
    x = rng.normal(size=(3, 2, 2))
    assert np.array_equal(T.pixel_shuffle(t64(x), 1).data, x)


def test_pixel_shuffle_layout():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = T.pixel_shuffle(t64(np.array([a, b, c, d]).reshape(4, 1, 1)), 2).data
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out[0], [[a, b], [c, d]])


def test_pixel_shuffle_round_trip(rng):
    x = t64(rng.normal(size=(2, 12, 3, 5)))
    assert np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(x, 2), 2).data, x.data)


def test_pixel_shuffle_indivisible():
    with pytest.raises(ShapeError):
        T.pixel_shuffle(t64(np.ones((3, 2, 2))), 2)


# -- backward ---------------------------------------------------------------


def test_grad_of_sum_is_ones(rng):
    x = t64(rng.normal(size=(2, 3, 4)), grad=True)
    (g,) = T.backward(T.tsum(x), [x])
    assert np.array_equal(g, np.ones((2, 3, 4)))


def test_grad_of_half_square_is_x(rng):
    x = t64(rng.normal(size=(5,)), grad=True)
    (g,) = T.backward(T.scale(T.tsum(T.mul(x, x)), 0.5), [x])
    assert np.allclose(g, x.data, rtol=0, atol=1e-15)


def test_non_scalar_loss_rejected():
    x = t64([1.0, 2.0], grad=True)
    with pytest.raises(ShapeError):
        T.backward(T.mul(x, x), [x])


def test_unreachable_leaf_gets_zero():
    x = t64([1.0, 2.0], grad=True)
    y = t64([[3.0]], grad=True)
    grads = T.backward(T.tsum(x), {"x": x, "y": y})
    assert np.array_equal(grads["y"], np.zeros((1, 1)))


def test_shared_subgraph_visited_once():
    x = t64([2.0], grad=True)
    y = T.mul(x, x)
    (g,) = T.backward(T.tsum(T.add(y, y)), [x])
    assert np.array_equal(g, [8.0])


def test_topological_order_inputs_first():
    x = t64([1.0], grad=True)
    y = T.exp(x)
    z = T.add(y, x)
    order = T.topological_order(T.tsum(z))
    pos = {id(t): i for i, t in enumerate(order)}
    assert pos[id(x)] < pos[id(y)] < pos[id(z)]


def test_backward_is_bitwise_deterministic(rng):
    w = rng.normal(size=(4, 3))
    x = rng.normal(size=(3, 5))

    def grads():
        wt = t64(w, grad=True)
        loss = T.tsum(T.gelu(T.matmul(wt, t64(x))))
        return T.backward(loss, [wt])[0]

    assert np.array_equal(grads(), grads())


def test_no_grad_skips_tape():
    x = t64([1.0], grad=True)
    with T.no_grad():
        y = T.exp(x)
    assert not y.requires_grad


def test_fault_injection_scales_gradient():
    x = t64([1.0, 2.0], grad=True)
    with T.inject_gradient_fault("exp", 2.0):
        (g,) = T.backward(T.tsum(T.exp(x)), [x])
    assert np.allclose(g, 2.0 * np.exp(x.data))


# -- linearity properties -----------------------------------------------------

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
coeff = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (3, 4), elements=finite),
       hnp.arrays(np.float64, (4, 2), elements=finite), coeff, coeff)
def test_matmul_linear(x, y, w, a, b):
    lhs = T.matmul(t64(a * x + b * y), t64(w)).data
    rhs = a * T.matmul(t64(x), t64(w)).data + b * T.matmul(t64(y), t64(w)).data
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(lhs).max()))


@given(hnp.arrays(np.float64, (2, 5, 5), elements=finite), hnp.arrays(np.float64, (2, 5, 5), elements=finite),
       coeff, coeff, st.integers(0, 2**32 - 1))
def test_conv2d_linear(x, y, a, b, seed):
    w = t64(np.random.default_rng(seed).normal(size=(3, 2, 3, 3)))
    lhs = T.conv2d(t64(a * x + b * y), w, padding=1).data
    rhs = a * T.conv2d(t64(x), w, padding=1).data + b * T.conv2d(t64(y), w, padding=1).data
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(lhs).max()))


@given(hnp.arrays(np.float64, (8, 2, 3), elements=finite), hnp.arrays(np.float64, (8, 2, 3), elements=finite),
       coeff, coeff)
def test_pixel_shuffle_linear(x, y, a, b):
    lhs = T.pixel_shuffle(t64(a * x + b * y), 2).data
    rhs = a * T.pixel_shuffle(t64(x), 2).data + b * T.pixel_shuffle(t64(y), 2).data
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(lhs).max()))


@given(hnp.array_shapes(min_dims=1, max_dims=4, max_side=4))
def test_product_of_shape_equals_size(shape):
    x = T.zeros(shape)
    assert x.data.size == int(np.prod(shape))


def test_softmax_rows_sum_to_one(rng):
    out = T.softmax(t64(rng.normal(size=(4, 7)) * 30)).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-14)


def test_upsample_nearest_layout():
    out = T.upsample_nearest(t64(np.array([[[1.0, 2.0]]])), 2).data
    assert np.array_equal(out[0], [[1, 1, 2, 2], [1, 1, 2, 2]])


def test_concat_and_slice_inverse(rng):
    a, b = t64(rng.normal(size=(2, 3))), t64(rng.normal(size=(2, 4)))
    c = T.concat([a, b], axis=1)
    assert np.array_equal(T.take_range(c, 3, 7, axis=1).data, b.data)
