"""Per-operation forward contracts and finite-difference gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litematch import ops
from litematch.errors import DegenerateDescriptorError, DimensionError
from litematch.gradcheck import check_gradients
from litematch.tensor import Tensor


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr), requires_grad=requires_grad, dtype=np.float64)


def rand64(rng, *shape, requires_grad=True):
    return t64(rng.standard_normal(shape), requires_grad=requires_grad)


def assert_gradcheck(forward, params, rtol=1e-3):
    failures = check_gradients(forward, params, rtol=rtol)
    assert not failures, "\n".join(failures)


# ---------------------------------------------------------------- conv2d


def test_conv2d_table_stage1_shape():
    x = Tensor(np.zeros((1, 1, 128, 128), dtype=np.float32))
    w = Tensor(np.zeros((16, 1, 7, 7), dtype=np.float32))
    b = Tensor(np.zeros(16, dtype=np.float32))
    out = ops.conv2d(x, w, b, stride=4, padding=3)
    assert out.shape == (1, 16, 32, 32)


def test_conv2d_zero_input_zero_bias_gives_zero():
    x = Tensor(np.zeros((2, 3, 9, 9), dtype=np.float32))
    w = Tensor(np.random.default_rng(0).standard_normal((4, 3, 3, 3)), dtype=np.float32)
    b = Tensor(np.zeros(4, dtype=np.float32))
    out = ops.conv2d(x, w, b, stride=1, padding=1)
    assert np.all(out.data == 0.0)


def test_conv2d_channel_mismatch_raises():
    x = Tensor(np.zeros((1, 2, 8, 8), dtype=np.float32))
    w = Tensor(np.zeros((4, 3, 3, 3), dtype=np.float32))
    b = Tensor(np.zeros(4, dtype=np.float32))
    with pytest.raises(DimensionError):
        ops.conv2d(x, w, b, stride=1, padding=1)


def test_conv2d_gradcheck():
    rng = np.random.default_rng(1)
    x = rand64(rng, 1, 2, 5, 5)
    w = rand64(rng, 3, 2, 3, 3)
    b = rand64(rng, 3)
    assert_gradcheck(
        lambda: ops.mean_all(ops.conv2d(x, w, b, stride=1, padding=1)), [x, w, b]
    )


def test_conv2d_strided_gradcheck():
    rng = np.random.default_rng(2)
    x = rand64(rng, 2, 1, 9, 9)
    w = rand64(rng, 2, 1, 3, 3)
    b = rand64(rng, 2)
    assert_gradcheck(
        lambda: ops.mean_all(ops.conv2d(x, w, b, stride=2, padding=1)), [x, w, b]
    )


# ------------------------------------------------------ depthwise_conv2d


def test_depthwise_identity_kernel():
    rng = np.random.default_rng(3)
    x = Tensor(rng.random((1, 4, 6, 6)), dtype=np.float32)
    w = np.zeros((4, 1, 3, 3), dtype=np.float32)
    w[:, 0, 1, 1] = 1.0
    out = ops.depthwise_conv2d(x, Tensor(w), Tensor(np.zeros(4, dtype=np.float32)))
    np.testing.assert_array_equal(out.data, x.data)


def test_depthwise_averaging_kernel_border_attenuation():
    x = Tensor(np.ones((1, 1, 6, 6), dtype=np.float32))
    w = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=np.float32))
    b = Tensor(np.zeros(1, dtype=np.float32))
    out = ops.depthwise_conv2d(x, w, b).data[0, 0]
    np.testing.assert_allclose(out[1:-1, 1:-1], 1.0, rtol=1e-6)
    assert np.all(out[0, :] < 1.0) and np.all(out[:, 0] < 1.0)


def test_depthwise_gradcheck():
    rng = np.random.default_rng(4)
    x = rand64(rng, 1, 4, 6, 6)
    w = rand64(rng, 4, 1, 3, 3)
    b = rand64(rng, 4)
    assert_gradcheck(lambda: ops.mean_all(ops.depthwise_conv2d(x, w, b)), [x, w, b])


# ---------------------------------------------------------------- linear


def test_linear_identity():
    x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
    w = Tensor(np.eye(4, dtype=np.float32))
    b = Tensor(np.zeros(4, dtype=np.float32))
    np.testing.assert_array_equal(ops.linear(x, w, b).data, x.data)


def test_linear_leading_broadcast_shape():
    x = Tensor(np.zeros((2, 3, 4), dtype=np.float32))
    w = Tensor(np.zeros((5, 4), dtype=np.float32))
    b = Tensor(np.zeros(5, dtype=np.float32))
    assert ops.linear(x, w, b).shape == (2, 3, 5)


def test_linear_dim_mismatch_raises():
    x = Tensor(np.zeros((2, 3), dtype=np.float32))
    w = Tensor(np.zeros((5, 4), dtype=np.float32))
    b = Tensor(np.zeros(5, dtype=np.float32))
    with pytest.raises(DimensionError):
        ops.linear(x, w, b)


def test_linear_gradcheck():
    rng = np.random.default_rng(5)
    x = rand64(rng, 2, 3, 4)
    w = rand64(rng, 5, 4)
    b = rand64(rng, 5)
    assert_gradcheck(lambda: ops.mean_all(ops.gelu(ops.linear(x, w, b))), [x, w, b])


# ------------------------------------------------------------ layer_norm


def test_layer_norm_constant_slice_is_zero():
    x = Tensor(np.full((2, 5), 3.7, dtype=np.float32))
    g = Tensor(np.ones(5, dtype=np.float32))
    b = Tensor(np.zeros(5, dtype=np.float32))
    out = ops.layer_norm(x, g, b)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_symmetric_pair():
    x = Tensor(np.array([[-1.0, 1.0]], dtype=np.float32))
    g = Tensor(np.ones(2, dtype=np.float32))
    b = Tensor(np.zeros(2, dtype=np.float32))
    out = ops.layer_norm(x, g, b)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-3)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_layer_norm_statistics(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4, 8)) * 5 + 2, dtype=np.float32)
    g = Tensor(np.ones(8, dtype=np.float32))
    b = Tensor(np.zeros(8, dtype=np.float32))
    out = ops.layer_norm(x, g, b).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(6)
    x = rand64(rng, 2, 4, 8)
    g = t64(np.ones(8) + 0.1 * rng.standard_normal(8))
    b = t64(0.1 * rng.standard_normal(8))
    assert_gradcheck(lambda: ops.mean_all(ops.gelu(ops.layer_norm(x, g, b))), [x, g, b])


# --------------------------------------------------------------- softmax


def test_softmax_uniform_slice():
    x = Tensor(np.zeros((1, 4), dtype=np.float32))
    np.testing.assert_allclose(ops.softmax(x).data, 0.25, rtol=1e-6)


def test_softmax_large_values_stable():
    x = Tensor(np.array([[1000.0, 0.0]], dtype=np.float32))
    out = ops.softmax(x).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 3, 7)) * 10, dtype=np.float32)
    out = ops.softmax(x).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_gradcheck():
    rng = np.random.default_rng(7)
    x = rand64(rng, 3, 6)
    v = rand64(rng, 3, 6, requires_grad=False)
    assert_gradcheck(lambda: ops.mean_all(ops.mul(ops.softmax(x), v)), [x])


# ------------------------------------------------------------------ gelu


def test_gelu_zero_and_asymptotics():
    x = Tensor(np.array([0.0, 8.0, -8.0], dtype=np.float32))
    out = ops.gelu(x).data
    assert out[0] == 0.0
    np.testing.assert_allclose(out[1], 8.0, rtol=1e-5)
    np.testing.assert_allclose(out[2], 0.0, atol=1e-5)


def test_gelu_gradcheck():
    rng = np.random.default_rng(8)
    x = rand64(rng, 4, 5)
    assert_gradcheck(lambda: ops.mean_all(ops.gelu(x)), [x])


# ------------------------------------------------------- global_avg_pool


def test_gap_constant_and_mean():
    x = Tensor(np.full((2, 3, 4, 4), 1.5, dtype=np.float32))
    np.testing.assert_allclose(ops.global_avg_pool(x).data, 1.5, rtol=1e-6)
    y = Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 1, 2, 2))
    np.testing.assert_allclose(ops.global_avg_pool(y).data, [[2.5]], rtol=1e-6)


def test_gap_gradcheck():
    rng = np.random.default_rng(9)
    x = rand64(rng, 2, 3, 4, 5)
    assert_gradcheck(lambda: ops.mean_all(ops.gelu(ops.global_avg_pool(x))), [x])


# ---------------------------------------------------------- l2_normalize


def test_l2_normalize_345_triangle():
    x = Tensor(np.array([[3.0, 4.0]], dtype=np.float32))
    np.testing.assert_allclose(ops.l2_normalize(x).data, [[0.6, 0.8]], rtol=1e-6)


def test_l2_normalize_idempotent():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((4, 16)).astype(np.float32)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    out = ops.l2_normalize(Tensor(x)).data
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_l2_normalize_degenerate_row_raises():
    x = Tensor(np.zeros((2, 8), dtype=np.float32))
    with pytest.raises(DegenerateDescriptorError):
        ops.l2_normalize(x)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_l2_normalize_unit_rows(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((4, 128)) + 0.1, dtype=np.float32)
    out = ops.l2_normalize(x).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)


def test_l2_normalize_gradcheck():
    rng = np.random.default_rng(11)
    x = rand64(rng, 4, 6)
    v = rand64(rng, 4, 6, requires_grad=False)
    assert_gradcheck(lambda: ops.mean_all(ops.mul(ops.l2_normalize(x), v)), [x])


# ------------------------------------------------- small composite pieces


def test_matmul_gradcheck():
    rng = np.random.default_rng(12)
    a = rand64(rng, 2, 2, 3, 4)
    b = rand64(rng, 2, 2, 4, 5)
    assert_gradcheck(lambda: ops.mean_all(ops.matmul(a, b)), [a, b])


def test_matmul_shape_mismatch_raises():
    a = Tensor(np.zeros((2, 3, 4), dtype=np.float32))
    b = Tensor(np.zeros((3, 4, 5), dtype=np.float32))
    with pytest.raises(DimensionError):
        ops.matmul(a, b)


def test_transpose_reshape_gradcheck():
    rng = np.random.default_rng(13)
    x = rand64(rng, 2, 3, 4)
    assert_gradcheck(
        lambda: ops.mean_all(ops.gelu(ops.reshape(ops.transpose(x, (0, 2, 1)), (2, 12)))),
        [x],
    )


def test_sqrt_relu_sum_gradcheck():
    rng = np.random.default_rng(14)
    x = t64(rng.random((3, 5)) + 0.5)
    assert_gradcheck(lambda: ops.mean_all(ops.sqrt(ops.sum_last(ops.mul(x, x)))), [x])


def test_scale_shift_sub_add_gradcheck():
    rng = np.random.default_rng(15)
    a = rand64(rng, 3, 4)
    b = rand64(rng, 3, 4)
    assert_gradcheck(
        lambda: ops.mean_all(ops.relu(ops.add(ops.scale(ops.sub(a, b), 2.5), ops.shift(a, 0.3)))),
        [a, b],
    )


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)

    def run():
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        return ops.softmax(ops.global_avg_pool(out)).data

    r1, r2 = run(), run()
    assert np.array_equal(r1, r2)


def test_five_random_instances_per_op_gradcheck():
    # engine-wide invariant: 5 random small-shape instances per differentiable op
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        x = rand64(rng, 2, 3, 6, 6)
        w = rand64(rng, 2, 3, 3, 3)
        b = rand64(rng, 2)
        assert_gradcheck(
            lambda: ops.mean_all(ops.conv2d(x, w, b, stride=1, padding=1)), [x, w, b]
        )
        dw = rand64(rng, 3, 1, 3, 3)
        db = rand64(rng, 3)
        xd = rand64(rng, 1, 3, 5, 5)
        assert_gradcheck(lambda: ops.mean_all(ops.depthwise_conv2d(xd, dw, db)), [xd, dw, db])
        xl = rand64(rng, 2, 7)
        wl = rand64(rng, 3, 7)
        bl = rand64(rng, 3)
        assert_gradcheck(lambda: ops.mean_all(ops.linear(xl, wl, bl)), [xl, wl, bl])
        xn = rand64(rng, 2, 5)
        gn = t64(np.ones(5) + 0.05 * rng.standard_normal(5))
        bn = t64(0.05 * rng.standard_normal(5))
        assert_gradcheck(lambda: ops.mean_all(ops.layer_norm(xn, gn, bn)), [xn, gn, bn])
        xs = rand64(rng, 3, 4)
        vs = rand64(rng, 3, 4, requires_grad=False)
        assert_gradcheck(lambda: ops.mean_all(ops.mul(ops.softmax(xs), vs)), [xs])
        xg = rand64(rng, 2, 6)
        assert_gradcheck(lambda: ops.mean_all(ops.gelu(xg)), [xg])
        xp = rand64(rng, 2, 2, 3, 3)
        assert_gradcheck(lambda: ops.mean_all(ops.global_avg_pool(xp)), [xp])
        xu = t64(rng.standard_normal((3, 8)) + 0.2)
        vu = rand64(rng, 3, 8, requires_grad=False)
        assert_gradcheck(lambda: ops.mean_all(ops.mul(ops.l2_normalize(xu), vu)), [xu])
