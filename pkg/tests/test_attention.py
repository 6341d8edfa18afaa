"""Transformer branch: banded attention, spectral feed-forward, block."""

import numpy as np
import pytest

from transmamba.attention import (BandedSpectralAttention, SpectralFeedForward,
                                  SpectralTransformerBlock)
from transmamba.rng import Rng
from transmamba.spectral import build_mesh_index, complex_to_real, fft2, ifft2, real_to_complex
from transmamba.tensor import (ShapeError, Tensor, chunk, matmul, reshape, silu,
                               softmax, transpose)


def rand_input(C, H, W, seed=0, std=0.6):
    return Tensor(Rng(seed).normal((C, H, W), std=std))


class TestBandedAttention:
    def test_output_shape_matches_input(self):
        mod = BandedSpectralAttention(4, heads=2, bands=2, rng=Rng(1))
        mesh = build_mesh_index(8, 8, 2)
        out = mod(rand_input(4, 8, 8, 2), mesh)
        assert out.shape == (4, 8, 8)

    def test_attention_rows_are_distributions(self):
        mod = BandedSpectralAttention(4, heads=2, bands=2, rng=Rng(3))
        maps = []
        mod.attn_hook = maps.append
        mod(rand_input(4, 8, 8, 4), build_mesh_index(8, 8, 2))
        (attn,) = maps
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(attn >= 0.0)

    def test_row_and_token_counts_mix_channels_and_bands(self):
        C, H, W, b, k = 4, 8, 8, 2, 2
        mod = BandedSpectralAttention(C, heads=k, bands=b, rng=Rng(5))
        maps = []
        mod.attn_hook = maps.append
        mod(rand_input(C, H, W, 6), build_mesh_index(H, W, b))
        (attn,) = maps
        rows = 2 * C * b
        assert attn.shape == (k, rows // k, rows // k)

    def test_single_band_single_head_equals_unbanded_oracle(self):
        """With b=1 the column permutation cancels inside Q K^T, so the whole
        module must match a plain channel-attention pipeline with no gather."""
        C, H, W = 2, 4, 4
        mod = BandedSpectralAttention(C, heads=1, bands=1, rng=Rng(7))
        mesh = build_mesh_index(H, W, 1)
        x = rand_input(C, H, W, 8)
        got = mod(x, mesh)

        qkv = mod.qkv_depth(mod.qkv_point(x))
        spec = complex_to_real(fft2(qkv))
        q, k, v = chunk(reshape(spec, (6 * C, H * W)), 3, axis=0)
        attn = softmax(matmul(q, transpose(k, (1, 0))) * 1.0, axis=-1)
        mixed = matmul(attn, v)
        plane = real_to_complex(reshape(mixed, (2 * C, H, W)))
        want = mod.out_point(ifft2(plane).re)
        assert np.max(np.abs(got.data - want.data)) < 1e-9

    def test_head_divisibility_validated(self):
        with pytest.raises(ShapeError):
            BandedSpectralAttention(3, heads=5, bands=1, rng=Rng(9))

    def test_scale_mode_changes_output(self):
        mesh = build_mesh_index(4, 4, 2)
        x = rand_input(2, 4, 4, 10)
        a = BandedSpectralAttention(2, 1, 2, Rng(11), scale_mode="heads")(x, mesh)
        b = BandedSpectralAttention(2, 1, 2, Rng(11), scale_mode="dim")(x, mesh)
        assert not np.allclose(a.data, b.data)


class TestSpectralFeedForward:
    def test_shape_preserved_with_weight_downscaling(self):
        # 48x48 stored weights resized down to the 12x12 feature plane
        mod = SpectralFeedForward(4, Rng(12), weight_size=48)
        out = mod(rand_input(4, 12, 12, 13))
        assert out.shape == (4, 12, 12)

    def test_identity_filter_matches_spatial_oracle(self):
        mod = SpectralFeedForward(3, Rng(14), weight_size=8)
        for w in (mod.w1_re, mod.w2_re):
            w.data = np.ones_like(w.data)
        for w in (mod.w1_im, mod.w2_im, mod.b1, mod.b2):
            w.data = np.zeros_like(w.data)
        x = rand_input(3, 8, 8, 15)
        got = mod(x)
        f1, f2 = chunk(mod.expand(x), 2, axis=0)
        want = mod.project(silu(mod.dw_dilated(f2)) * mod.dw_plain(f1))
        assert np.max(np.abs(got.data - want.data)) < 1e-9

    def test_zero_input_zero_biases_gives_zero(self):
        mod = SpectralFeedForward(2, Rng(16), weight_size=4)
        for p in (mod.expand.bias, mod.dw_plain.bias, mod.dw_dilated.bias,
                  mod.b1, mod.b2, mod.project.bias):
            p.data = np.zeros_like(p.data)
        out = mod(Tensor(np.zeros((2, 4, 4))))
        assert np.max(np.abs(out.data)) < 1e-12

    def test_hidden_width_is_floor_of_ratio(self):
        mod = SpectralFeedForward(8, Rng(17), ratio=2.667)
        assert mod.hidden == 21


class TestSpectralTransformerBlock:
    def test_zeroed_output_convs_make_identity(self):
        mod = SpectralTransformerBlock(2, heads=1, bands=2, rng=Rng(18), weight_size=4)
        for p in (mod.attn.out_point.weight, mod.attn.out_point.bias,
                  mod.ffn.project.weight, mod.ffn.project.bias):
            p.data = np.zeros_like(p.data)
        x = rand_input(2, 4, 4, 19)
        out = mod(x, build_mesh_index(4, 4, 2))
        assert np.array_equal(out.data, x.data)

    def test_nonlocal_receptive_field(self):
        mod = SpectralTransformerBlock(2, heads=1, bands=2, rng=Rng(20), weight_size=4)
        mesh = build_mesh_index(8, 8, 2)
        x = rand_input(2, 8, 8, 21)
        base = mod(x, mesh).data
        bumped = x.data.copy()
        bumped[:, 0, 0] += 1e-3
        far = mod(Tensor(bumped), mesh).data
        assert abs(far[0, -1, -1] - base[0, -1, -1]) > 0.0

    @pytest.mark.parametrize("C,H,W", [(2, 4, 4), (4, 8, 4), (8, 4, 12), (4, 12, 12)])
    def test_shape_preservation_property(self, C, H, W):
        heads = 2 if (2 * C * 2) % 2 == 0 else 1
        mod = SpectralTransformerBlock(C, heads=heads, bands=2, rng=Rng(C + H + W),
                                       weight_size=6)
        out = mod(rand_input(C, H, W, C * H + W), build_mesh_index(H, W, 2))
        assert out.shape == (C, H, W)

    def test_all_parameters_receive_gradient(self):
        mod = SpectralTransformerBlock(4, heads=2, bands=2, rng=Rng(22), weight_size=6)
        x = rand_input(4, 8, 8, 23)
        out = mod(x, build_mesh_index(8, 8, 2))
        (out * out).sum().backward()
        for name, p in mod.named_parameters():
            assert p.grad is not None, f"{name} missing grad"
            assert np.any(p.grad != 0.0), f"{name} has all-zero grad"
