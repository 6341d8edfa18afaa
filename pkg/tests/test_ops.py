"""Convolution, normalization, resampling: oracle values and gradients."""

import numpy as np
import pytest

from transmamba.gradcheck import check_gradients
from transmamba.ops import (bilinear_resize, conv1d_depthwise, conv2d, layer_norm,
                            pixel_shuffle, pixel_unshuffle, reflect_pad2d)
from transmamba.rng import Rng
from transmamba.tensor import ShapeError, Tensor, tsum


def conv2d_oracle(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """Direct-summation cross-correlation used as the independent reference."""
    C, H, W = x.shape
    Cout, Cg, kh, kw = w.shape
    ph = pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    Ho = (H + 2 * ph - (dilation * (kh - 1) + 1)) // stride + 1
    Wo = (W + 2 * pw - (dilation * (kw - 1) + 1)) // stride + 1
    out = np.zeros((Cout, Ho, Wo))
    cpg = C // groups
    for o in range(Cout):
        g = o // (Cout // groups)
        for ho in range(Ho):
            for wo in range(Wo):
                acc = 0.0
                for ci in range(cpg):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[g * cpg + ci,
                                      ho * stride + i * dilation,
                                      wo * stride + j * dilation] * w[o, ci, i, j]
                out[o, ho, wo] = acc
    if b is not None:
        out += b[:, None, None]
    return out


class TestConv2d:
    def test_all_ones_counting(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, padding=1)
        assert out.data[0, 1, 1] == pytest.approx(9.0)

    def test_identity_pointwise(self):
        x = Tensor(Rng(1).uniform((3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        assert np.allclose(conv2d(x, w).data, x.data)

    def test_depthwise_dilated_delta_spread(self):
        delta = np.zeros((1, 5, 5))
        delta[0, 2, 2] = 1.0
        w = Rng(2).normal((1, 1, 3, 3))
        out = conv2d(Tensor(delta), Tensor(w), padding=2, dilation=2, groups=1)
        want = conv2d_oracle(delta, w, padding=2, dilation=2)
        assert np.max(np.abs(out.data - want)) < 1e-12
        # cross-correlation spreads the reversed kernel around the delta, spacing 2
        assert out.data[0, 0, 0] == pytest.approx(w[0, 0, 2, 2])
        assert out.data[0, 4, 4] == pytest.approx(w[0, 0, 0, 0])
        assert out.data[0, 2, 2] == pytest.approx(w[0, 0, 1, 1])

    @pytest.mark.parametrize("groups,stride,dilation,k", [
        (1, 1, 1, 3), (2, 1, 1, 3), (4, 1, 2, 3), (1, 2, 1, 3), (4, 1, 1, 5),
    ])
    def test_matches_direct_summation(self, groups, stride, dilation, k):
        rng = Rng(groups * 10 + stride + dilation + k)
        x = rng.normal((4, 8, 8))
        w = rng.normal((4, 4 // groups, k, k))
        b = rng.normal((4,))
        pad = dilation * (k - 1) // 2
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                     padding=pad, dilation=dilation, groups=groups)
        want = conv2d_oracle(x, w, b, stride=stride, padding=pad,
                             dilation=dilation, groups=groups)
        assert np.max(np.abs(out.data - want)) < 1e-12

    def test_batched_matches_per_image(self):
        rng = Rng(77)
        x = rng.normal((2, 3, 6, 6))
        w = rng.normal((5, 3, 3, 3))
        out = conv2d(Tensor(x), Tensor(w))
        for i in range(2):
            assert np.allclose(out.data[i], conv2d(Tensor(x[i]), Tensor(w)).data)

    def test_shape_errors_name_dimension(self):
        with pytest.raises(ShapeError, match="C_in"):
            conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((4, 3, 3, 3))), groups=2)
        with pytest.raises(ShapeError, match="input channels"):
            conv2d(Tensor(np.zeros((4, 4, 4))), Tensor(np.zeros((4, 3, 3, 3))))
        with pytest.raises(ShapeError, match="bias"):
            conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((4, 3, 3, 3))),
                   Tensor(np.zeros(5)))

    @pytest.mark.parametrize("groups,k,dilation", [(1, 3, 1), (4, 3, 2), (4, 5, 1), (1, 1, 1)])
    def test_gradients(self, groups, k, dilation):
        rng = Rng(groups + k + dilation)
        x = Tensor(rng.normal((4, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal((4, 4 // groups, k, k), std=0.5), requires_grad=True)
        b = Tensor(rng.normal((4,)), requires_grad=True)
        probe = Tensor(rng.normal((4, 6, 6)))
        fn = lambda: tsum(conv2d(x, w, b, dilation=dilation, groups=groups) * probe)
        assert check_gradients(fn, [x, w, b], n_coords=24) < 1e-4


class TestConv1dDepthwise:
    def test_width_one_identity(self):
        x = Tensor(Rng(3).normal((2, 7)))
        w = Tensor(np.ones((2, 1, 1)))
        assert np.allclose(conv1d_depthwise(x, w).data, x.data)

    def test_hand_summation(self):
        out = conv1d_depthwise(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 1.0, 1.0]]]))
        assert np.allclose(out.data, [[3.0, 6.0, 5.0]])

    def test_kernel_wider_than_sequence_rejected(self):
        with pytest.raises(ShapeError, match="width"):
            conv1d_depthwise(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 3))))

    def test_gradient_matches_finite_differences(self):
        rng = Rng(4)
        x = Tensor(rng.normal((3, 10)), requires_grad=True)
        w = Tensor(rng.normal((3, 1, 3)), requires_grad=True)
        b = Tensor(rng.normal((3,)), requires_grad=True)
        probe = Tensor(rng.normal((3, 10)))
        fn = lambda: tsum(conv1d_depthwise(x, w, b) * probe)
        assert check_gradients(fn, [x, w, b], n_coords=20) < 1e-4


class TestLayerNorm:
    def test_constant_channels_map_to_beta(self):
        x = Tensor(np.full((4, 3, 3), 2.5))
        gamma, beta = Tensor(np.ones(4)), Tensor(np.full(4, 0.7))
        out = layer_norm(x, gamma, beta)
        assert np.allclose(out.data, 0.7, atol=1e-3)

    def test_two_channel_closed_form(self):
        x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1))
        out = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-5)

    def test_unit_variance_per_position(self):
        x = Tensor(Rng(5).normal((8, 4, 4), std=3.0))
        out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12)
        var = out.data.var(axis=0)
        assert np.max(np.abs(var - 1.0)) < 1e-6

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros((2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_gradients(self):
        rng = Rng(6)
        x = Tensor(rng.normal((3, 4, 4)), requires_grad=True)
        g = Tensor(rng.normal((3,)), requires_grad=True)
        b = Tensor(rng.normal((3,)), requires_grad=True)
        probe = Tensor(rng.normal((3, 4, 4)))
        fn = lambda: tsum(layer_norm(x, g, b) * probe)
        assert check_gradients(fn, [x, g, b], n_coords=24) < 1e-4


class TestPixelShuffle:
    def test_inverse_pair_bit_exact(self):
        x = Tensor(Rng(7).normal((3, 8, 8)))
        assert np.array_equal(pixel_shuffle(pixel_unshuffle(x, 2), 2).data, x.data)

    def test_unshuffle_shape(self):
        assert pixel_unshuffle(Tensor(np.zeros((1, 4, 4))), 2).shape == (4, 2, 2)

    def test_unshuffle_channel_order(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))  # [[a,b],[c,d]]
        out = pixel_unshuffle(x, 2)
        assert np.allclose(out.data.ravel(), [1.0, 2.0, 3.0, 4.0])

    def test_divisibility_errors(self):
        with pytest.raises(ShapeError):
            pixel_unshuffle(Tensor(np.zeros((1, 3, 4))), 2)
        with pytest.raises(ShapeError):
            pixel_shuffle(Tensor(np.zeros((3, 2, 2))), 2)

    def test_batched_roundtrip(self):
        x = Tensor(Rng(8).normal((2, 4, 6, 6)))
        assert np.array_equal(pixel_shuffle(pixel_unshuffle(x, 2), 2).data, x.data)


class TestBilinearResize:
    def test_constant_plane_stays_constant(self):
        out = bilinear_resize(Tensor(np.full((2, 3, 3), 0.4)), 7, 5)
        assert np.allclose(out.data, 0.4)

    def test_same_size_is_identity(self):
        x = Tensor(Rng(9).normal((2, 4, 4)))
        assert np.array_equal(bilinear_resize(x, 4, 4).data, x.data)

    def test_center_of_2x2_grid(self):
        x = Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
        out = bilinear_resize(x, 3, 3)
        assert out.data[0, 1, 1] == pytest.approx(1.5)
        # align-corners keeps the corners exact
        assert out.data[0, 0, 0] == 0.0 and out.data[0, 2, 2] == 3.0

    def test_too_small_source_rejected(self):
        with pytest.raises(ShapeError):
            bilinear_resize(Tensor(np.zeros((1, 1, 4))), 3, 4)

    def test_gradients_up_and_down(self):
        rng = Rng(10)
        x = Tensor(rng.normal((2, 5, 4)), requires_grad=True)
        for H, W in ((8, 9), (3, 2)):
            probe = Tensor(rng.normal((2, H, W)))
            fn = lambda: tsum(bilinear_resize(x, H, W) * probe)
            assert check_gradients(fn, [x], n_coords=20) < 1e-4


class TestReflectPad:
    def test_values_mirror_without_edge_repeat(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        out = reflect_pad2d(x, (1, 1, 1, 1))
        assert out.shape == (1, 5, 5)
        assert out.data[0, 0, 1] == x.data[0, 1, 0]
        assert out.data[0, 1, 0] == x.data[0, 0, 1]

    def test_oversized_pad_rejected(self):
        with pytest.raises(ShapeError):
            reflect_pad2d(Tensor(np.zeros((1, 3, 3))), (3, 0, 0, 0))

    def test_gradients(self):
        rng = Rng(11)
        x = Tensor(rng.normal((2, 4, 5)), requires_grad=True)
        probe = Tensor(rng.normal((2, 6, 8)))
        fn = lambda: tsum(reflect_pad2d(x, (1, 1, 2, 1)) * probe)
        assert check_gradients(fn, [x], n_coords=20) < 1e-4
