"""Transformer branch: banded spectral self-attention and the gated
spectral feed-forward, composed into a pre-norm residual block.

Attention runs over FFT-domain features whose frequency positions have
been reorganized into equal-size bands folded onto the channel axis, so
rows mix channel and band identity while tokens shrink to H*W/b.
"""

from __future__ import annotations

import math

import numpy as np

from .module import Conv2d, LayerNorm, Module, Parameter
from .rng import Rng
from .spectral import (ComplexPlane, MeshIndex, band_reorganize, band_restore,
                       complex_to_real, fft2, ifft2, real_to_complex, spectral_filter)
from .tensor import ShapeError, chunk, concat, matmul, reshape, silu, softmax, transpose


class BandedSpectralAttention(Module):
    """Self-attention over band-reorganized spectra (SBSA).

    The optional ``attn_hook`` receives a copy of the (heads, rows, rows)
    row-stochastic attention array on every forward call.
    """

    def __init__(self, channels: int, heads: int, bands: int, rng: Rng,
                 scale_mode: str = "heads"):
        if (2 * channels * bands) % heads:
            raise ShapeError(f"heads={heads} must divide 2*C*b = {2 * channels * bands}")
        if scale_mode not in ("heads", "dim"):
            raise ValueError(f"unknown scale_mode {scale_mode!r}")
        self.heads = heads
        self.bands = bands
        self.scale_mode = scale_mode
        self.attn_hook = None
        self.qkv_point = Conv2d(channels, 3 * channels, 1, rng)
        # one grouped conv holds the three per-channel q/k/v kernels
        self.qkv_depth = Conv2d(3 * channels, 3 * channels, 3, rng, groups=3 * channels)
        self.out_point = Conv2d(channels, channels, 1, rng)

    def forward(self, x, mesh: MeshIndex):
        C, H, W = x.shape
        if H * W % mesh.bands:
            raise ShapeError(f"H*W={H * W} not divisible by {mesh.bands} bands")
        qkv = self.qkv_depth(self.qkv_point(x))
        spec = complex_to_real(fft2(qkv))                   # (6C, H, W)
        banded = band_reorganize(reshape(spec, (6 * C, H * W)), mesh)
        qb, kb, vb = chunk(banded, 3, axis=0)               # (2C*b, H*W/b) each

        rows, tokens = qb.shape
        per_head = rows // self.heads
        qh = reshape(qb, (self.heads, per_head, tokens))
        kh = reshape(kb, (self.heads, per_head, tokens))
        vh = reshape(vb, (self.heads, per_head, tokens))

        scale = 1.0 / math.sqrt(self.heads if self.scale_mode == "heads" else tokens)
        attn = softmax(matmul(qh, transpose(kh, (0, 2, 1))) * scale, axis=-1)
        if self.attn_hook is not None:
            self.attn_hook(attn.data.copy())

        mixed = reshape(matmul(attn, vh), (rows, tokens))
        restored = band_restore(mixed, mesh)                # (2C, H*W)
        plane = real_to_complex(reshape(restored, (2 * C, H, W)))
        spatial = ifft2(plane).re
        return self.out_point(spatial)


class SpectralFeedForward(Module):
    """Two-branch gated feed-forward with learnable spectral filters (SEFF).

    Each branch is filtered in the frequency domain by an interpolated
    complex weight plane plus a real per-channel bias; the dilated branch
    gates the plain branch through SiLU.
    """

    def __init__(self, channels: int, rng: Rng, ratio: float = 2.667,
                 weight_size: int = 48):
        hidden = int(ratio * channels)
        self.hidden = hidden
        self.expand = Conv2d(channels, 2 * hidden, 1, rng)
        self.dw_plain = Conv2d(hidden, hidden, 3, rng, groups=hidden)
        self.dw_dilated = Conv2d(hidden, hidden, 3, rng, groups=hidden, dilation=2)
        # near-identity filter at init: 1 + noise on the real plane, noise on imag
        s = weight_size
        self.w1_re = Parameter(1.0 + rng.normal((hidden, s, s), std=0.02))
        self.w1_im = Parameter(rng.normal((hidden, s, s), std=0.02))
        self.w2_re = Parameter(1.0 + rng.normal((hidden, s, s), std=0.02))
        self.w2_im = Parameter(rng.normal((hidden, s, s), std=0.02))
        self.b1 = Parameter(np.zeros(hidden))
        self.b2 = Parameter(np.zeros(hidden))
        self.project = Conv2d(hidden, channels, 1, rng)

    def forward(self, x):
        f1, f2 = chunk(self.expand(x), 2, axis=0)
        both = concat([self.dw_plain(f1), self.dw_dilated(f2)], axis=0)
        # both branches ride one FFT/IFFT pair; the filters stay per-branch
        weight = ComplexPlane(concat([self.w1_re, self.w2_re], axis=0),
                              concat([self.w1_im, self.w2_im], axis=0))
        bias = concat([self.b1, self.b2], axis=0)
        filtered = ifft2(spectral_filter(fft2(both), weight, bias)).re
        f1, f2 = chunk(filtered, 2, axis=0)
        return self.project(silu(f2) * f1)


class SpectralTransformerBlock(Module):
    """Pre-norm residual pair: x + SBSA(LN(x)), then x + SEFF(LN(x))."""

    def __init__(self, channels: int, heads: int, bands: int, rng: Rng,
                 ratio: float = 2.667, weight_size: int = 48, scale_mode: str = "heads"):
        self.norm1 = LayerNorm(channels)
        self.attn = BandedSpectralAttention(channels, heads, bands, rng, scale_mode)
        self.norm2 = LayerNorm(channels)
        self.ffn = SpectralFeedForward(channels, rng, ratio, weight_size)

    def forward(self, x, mesh: MeshIndex):
        x = x + self.attn(self.norm1(x), mesh)
        return x + self.ffn(self.norm2(x))
