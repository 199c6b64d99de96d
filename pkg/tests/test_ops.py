import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpasal.autodiff import Tensor, backward, ops, precision


def conv_reference(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for y in range(ho):
                for x_ in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ch, y * stride + dy, x_ * stride + dx] * w[o, ch, dy, dx]
                    out[i, o, y, x_] = acc
    return out


# -- conv2d -----------------------------------------------------------------

def test_conv_scalar_kernel_scales():
    out = ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor([[[[2.0]]]]), Tensor([0.0]))
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, 2.0)


def test_conv_zero_kernel_gives_bias(rng):
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    out = ops.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), Tensor([0.5, -1.0, 0.0, 2.0]), 1, 1)
    for o, b in enumerate([0.5, -1.0, 0.0, 2.0]):
        np.testing.assert_array_equal(out.data[:, o], np.float32(b))


def test_conv_matches_nested_loops(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    ref = conv_reference(x.astype(np.float32).astype(np.float64), w.astype(np.float32), b.astype(np.float32), 2, 1)
    assert out.shape == (1, 3, 3, 3)
    assert np.max(np.abs(out.data - ref)) <= 1e-5


@given(st.integers(1, 2), st.integers(1, 3), st.integers(3, 7), st.integers(1, 2), st.integers(0, 1))
def test_conv_matches_nested_loops_property(n, c, size, stride, pad):
    rng = np.random.default_rng(size * 7 + c)
    x = rng.normal(size=(n, c, size, size))
    w = rng.normal(size=(2, c, 3, 3))
    b = rng.normal(size=2)
    with precision(np.float64):
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
    np.testing.assert_allclose(out.data, conv_reference(x, w, b, stride, pad), atol=1e-10)


def test_conv_even_input_stride_two_halves():
    out = ops.conv2d(Tensor(np.zeros((1, 1, 16, 16))), Tensor(np.zeros((1, 1, 3, 3))), None, 2, 1)
    assert out.shape == (1, 1, 8, 8)


@pytest.mark.parametrize("xshape,wshape,match", [
    ((1, 2, 5, 5), (1, 3, 3, 3), "C=2"),
    ((1, 1, 2, 5), (1, 1, 3, 3), "H"),
    ((1, 1, 5, 2), (1, 1, 3, 3), "W"),
])
def test_conv_shape_errors_name_dimension(xshape, wshape, match):
    with pytest.raises(ValueError, match=match):
        ops.conv2d(Tensor(np.zeros(xshape)), Tensor(np.zeros(wshape)))


# -- pooling and upsampling -------------------------------------------------

@given(st.floats(-5, 5), st.integers(1, 6), st.integers(1, 6))
def test_pool_of_constant_is_constant(c, bh, bw):
    x = Tensor(np.full((1, 2, 6, 6), c))
    out = ops.adaptive_avg_pool2d(x, (bh, bw))
    assert out.shape == (1, 2, bh, bw)
    np.testing.assert_allclose(out.data, np.float32(c), rtol=1e-6, atol=1e-6)


def test_pool_quadrants():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(ops.adaptive_avg_pool2d(x, (2, 2)).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_pool_full_bins_is_identity(rng):
    x = rng.normal(size=(2, 3, 5, 4)).astype(np.float32)
    np.testing.assert_array_equal(ops.adaptive_avg_pool2d(Tensor(x), (5, 4)).data, x)


def test_pool_rejects_oversized_bins():
    with pytest.raises(ValueError):
        ops.adaptive_avg_pool2d(Tensor(np.zeros((1, 1, 2, 2))), (3, 1))


def test_upsample_broadcasts_single_cell():
    out = ops.upsample_nearest(Tensor(np.full((1, 1, 1, 1), 3.5)), (4, 5))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 4, 5), 3.5))


def test_upsample_same_size_is_identity(rng):
    x = rng.normal(size=(1, 2, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(ops.upsample_nearest(Tensor(x), (3, 3)).data, x)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 5), st.integers(0, 5))
def test_upsample_matches_index_formula(h, w, dh, dw):
    H, W = h + dh, w + dw
    x = np.arange(h * w, dtype=np.float64).reshape(1, 1, h, w)
    out = ops.upsample_nearest(Tensor(x), (H, W)).data[0, 0]
    for i in range(H):
        for j in range(W):
            assert out[i, j] == x[0, 0, i * h // H, j * w // W]


def test_upsample_block_replication():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out = ops.upsample_nearest(Tensor(x), (4, 4)).data[0, 0]
    np.testing.assert_array_equal(out, np.kron(x[0, 0], np.ones((2, 2))))


def test_upsample_rejects_downscale():
    with pytest.raises(ValueError):
        ops.upsample_nearest(Tensor(np.zeros((1, 1, 4, 4))), (2, 4))


def test_upsample_gradient_sums_to_source():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    backward(ops.sum(ops.upsample_nearest(x, (4, 6))))
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 6.0))


# -- elementwise and reductions --------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros((1, 4))), axis=1).data, 0.25)


def test_sigmoid_zero():
    assert ops.sigmoid(Tensor([0.0])).item() == 0.5


def test_log_sum_exp_no_overflow():
    out = ops.log_sum_exp(Tensor(np.array([[1000.0, 1000.0]])), axis=1)
    assert np.isfinite(out.item())
    assert abs(out.item() - (1000 + np.log(2))) < 1e-3


@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_positive_and_normalized(x):
    p = ops.softmax(Tensor(x), axis=1).data
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@given(arrays(np.float64, (4,), elements=st.floats(-80, 80)))
def test_sigmoid_stays_in_unit_interval(x):
    s = ops.sigmoid(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))


@pytest.mark.parametrize("fn", [lambda t: ops.softmax(t, axis=2), lambda t: ops.log_sum_exp(t, axis=-3),
                                lambda t: ops.mean(t, axis=5), lambda t: ops.sum(t, axis=2)])
def test_axis_out_of_range_rejected(fn):
    with pytest.raises(ValueError, match="axis"):
        fn(Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul])
def test_binary_shape_mismatch_rejected(op):
    with pytest.raises(ValueError, match="shape"):
        op(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_concat_channels(rng):
    a, b = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 2, 3, 3))
    out = ops.concat([Tensor(a), Tensor(b)], axis=1)
    np.testing.assert_array_equal(out.data, np.concatenate([a, b], axis=1).astype(np.float32))


def test_linear_matches_matmul(rng):
    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)
    with precision(np.float64):
        out = ops.linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, x @ w.T + b)


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        ops.log(Tensor([1.0, 0.0]))


def test_float32_storage():
    assert Tensor([1, 2, 3]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64


def test_forward_is_deterministic(rng):
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    a = ops.conv2d(Tensor(x), Tensor(w), None, 2, 1).data
    b = ops.conv2d(Tensor(x), Tensor(w), None, 2, 1).data
    assert a.tobytes() == b.tobytes()
