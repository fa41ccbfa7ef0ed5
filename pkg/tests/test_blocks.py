import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import zero_params
from twostage_denoise import blocks
from twostage_denoise import tensor as T
from twostage_denoise.conv import conv2d
from twostage_denoise.tensor import ShapeError, Tensor, finite_diff_grad


def t64(rng, *shape, grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


def test_dense_block_shape_default_width():
    rng = np.random.default_rng(0)
    p = blocks.init_dense_block(rng, 64, 32)
    out = blocks.dense_block(Tensor(rng.standard_normal((1, 64, 16, 16)).astype(np.float32)), p)
    assert out.shape == (1, 64, 16, 16)


def test_dense_growth_law():
    rng = np.random.default_rng(0)
    for p in (blocks.init_dense_block(rng, 16, 8), blocks.init_dense_block(rng, 16, 8, blocks.DEFAULT_DILATIONS)):
        for i, layer in enumerate(p.layers, start=1):
            assert layer.in_ch == 16 + (i - 1) * 8 and layer.out_ch == 8
        assert p.layers[4].in_ch == 16 + 4 * 8
        assert p.fusion.in_ch == 16 + 8 * 8 and p.fusion.kernel_size == (1, 1)


def test_hybrid_dilated_layers_keep_shape():
    rng = np.random.default_rng(1)
    p = blocks.init_dense_block(rng, 4, 2, blocks.DEFAULT_DILATIONS, dtype=np.float64)
    assert p.dilations == (1, 2, 3, 4, 4, 3, 2, 1)
    assert all(l.padding == (l.dilation[0],) * 2 for l in p.layers)
    x = t64(rng, 2, 4, 9, 7)
    assert blocks.hybrid_dilated_dense_block(x, p).shape == x.shape


def test_dense_block_zero_weights_give_zero():
    rng = np.random.default_rng(2)
    p = zero_params(blocks.init_dense_block(rng, 4, 2, dtype=np.float64))
    assert np.all(blocks.dense_block(t64(rng, 1, 4, 6, 6), p).data == 0)


def test_dense_block_channel_mismatch():
    rng = np.random.default_rng(3)
    p = blocks.init_dense_block(rng, 4, 2, dtype=np.float64)
    with pytest.raises(ShapeError):
        blocks.dense_block(t64(rng, 1, 5, 6, 6), p)


def test_all_rates_one_equals_dense_block():
    rng = np.random.default_rng(4)
    p = blocks.init_dense_block(rng, 4, 3, (1,) * 8, dtype=np.float64)
    x = t64(rng, 2, 4, 8, 8)
    np.testing.assert_array_equal(blocks.hybrid_dilated_dense_block(x, p).data, blocks.dense_block(x, p).data)


def test_dilated_layer_receptive_field_of_impulse():
    rng = np.random.default_rng(5)
    p = blocks.init_conv(rng, 1, 1, 3, dilation=4, padding=4, dtype=np.float64)
    p.weight.data[...] = 1.0
    x = np.zeros((1, 1, 21, 21))
    x[0, 0, 10, 10] = 1.0
    out = conv2d(Tensor(x), p).data[0, 0]
    rows = np.nonzero(out.any(axis=1))[0]
    assert rows.max() - rows.min() + 1 == 9 == (3 - 1) * 4 + 1


def test_spatial_attention_zero_input():
    rng = np.random.default_rng(6)
    p = blocks.init_spatial_attention(rng, np.float64)
    x = Tensor(np.zeros((1, 3, 5, 5)))
    np.testing.assert_array_equal(blocks.spatial_attention_map(x, p).data, 0.5)
    out = blocks.spatial_attention(x, p)
    assert out.shape == x.shape and np.all(out.data == 0)


def test_channel_attention_zero_input_and_gap_linearity():
    rng = np.random.default_rng(7)
    p = blocks.init_channel_attention(rng, 16, 8, np.float64)
    x = Tensor(np.zeros((2, 16, 5, 5)))
    np.testing.assert_array_equal(blocks.channel_attention_vector(x, p).data, 0.5)
    assert np.all(blocks.channel_attention(x, p).data == 0)
    y = t64(rng, 2, 16, 5, 5)
    np.testing.assert_allclose(T.spatial_gap(T.scale(y, 2.0)).data, 2 * T.spatial_gap(y).data, atol=1e-14)
    assert blocks.channel_attention(y, p).shape == y.shape


def test_channel_attention_ratio_must_divide():
    with pytest.raises(ValueError, match="divisible"):
        blocks.init_channel_attention(np.random.default_rng(0), 12, 8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 30))
def test_attention_values_strictly_inside_unit_interval(seed, scale):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 8, 6, 6)) * scale)
    sp = blocks.init_spatial_attention(rng, np.float64)
    ca = blocks.init_channel_attention(rng, 8, 4, np.float64)
    amap = blocks.spatial_attention_map(x, sp).data
    vec = blocks.channel_attention_vector(x, ca).data
    assert vec.shape == (2, 8, 1, 1) and amap.shape == (2, 1, 6, 6)
    assert np.all((amap > 0) & (amap < 1)) and np.all((vec > 0) & (vec < 1))


@pytest.mark.parametrize("dtype,tol", [(np.float64, 0.0), (np.float32, 1e-6)])
def test_residual_identity(dtype, tol):
    rng = np.random.default_rng(8)
    rp = blocks.init_rdam(rng, 8, 4, dtype)
    hp = blocks.init_hdrdam(rng, 8, 4, dtype=dtype)
    zero_params(rp.dense)
    zero_params(hp.dense)
    x = Tensor(rng.standard_normal((2, 8, 7, 7)).astype(dtype))
    assert np.max(np.abs(blocks.rdam(x, rp).data - x.data)) <= tol
    assert np.max(np.abs(blocks.hdrdam(x, hp).data - x.data)) <= tol


def test_residual_identity_gradient_is_skip_path():
    rng = np.random.default_rng(9)
    for p, fn in ((blocks.init_rdam(rng, 4, 2, np.float64), blocks.rdam),
                  (blocks.init_hdrdam(rng, 4, 2, ratio=2, dtype=np.float64), blocks.hdrdam)):
        zero_params(p.dense)
        x = t64(rng, 1, 4, 6, 6, grad=True)
        g = rng.standard_normal(x.shape)
        fn(x, p).backward(g)
        np.testing.assert_array_equal(x.grad, g)
        fd = finite_diff_grad(lambda t: T.sum_all(T.mul(fn(t, p), Tensor(g))), Tensor(x.data.copy()))
        np.testing.assert_allclose(fd, g, atol=1e-8)
        for layer in p.dense.layers + [p.dense.fusion]:
            assert np.isfinite(layer.weight.grad).all()


def test_hdrdam_matches_direct_composition():
    rng = np.random.default_rng(10)
    p = blocks.init_hdrdam(rng, 8, 3, dilations=(1,) * 8, ratio=4, dtype=np.float64)
    x = rng.standard_normal((2, 8, 6, 6))

    def relu(a):
        return np.maximum(a, 0)

    def conv(a, c):
        return conv2d(Tensor(a), c).data

    feats = [x]
    for layer in p.dense.layers:
        feats.append(relu(conv(np.concatenate(feats, axis=1), layer)))
    d = conv(np.concatenate(feats, axis=1), p.dense.fusion)
    s = d.mean(axis=(2, 3), keepdims=True)
    v = 1 / (1 + np.exp(-conv(relu(conv(s, p.attention.reduce)), p.attention.expand)))
    expected = d * v + x
    np.testing.assert_allclose(blocks.hdrdam(Tensor(x), p).data, expected, atol=1e-12)


def test_rdam_shape_preserved(rng):
    p = blocks.init_rdam(rng, 6, 2, np.float64)
    x = t64(rng, 3, 6, 5, 9)
    assert blocks.rdam(x, p).shape == x.shape
