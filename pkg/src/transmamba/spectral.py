"""Frequency-domain machinery.

A spectrum is carried as a pair of real tensors (ComplexPlane).  The mesh
index ranks unshifted-FFT positions from high to low frequency using
wrap-around coordinates, so DC sorts last; equal-size contiguous runs along
that ranking form the spectral bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import bilinear_resize
from .tensor import (ShapeError, Tensor, _accum, _make, as_tensor, chunk, concat,
                     gather_cols, reshape, scatter_cols)


@dataclass
class ComplexPlane:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape


def _fft_data(z: np.ndarray, inverse: bool) -> np.ndarray:
    return np.fft.ifft2(z, axes=(-2, -1)) if inverse else np.fft.fft2(z, axes=(-2, -1))


def fft2(x) -> ComplexPlane:
    """Unnormalized forward 2D DFT of a real tensor over the last two axes."""
    x = as_tensor(x)
    H, W = x.shape[-2], x.shape[-1]
    spec = _fft_data(x.data.astype(np.complex128), inverse=False)

    def bwd_re(g):
        _accum(x, np.real(_fft_data(g.astype(np.complex128), inverse=True)) * (H * W))

    def bwd_im(g):
        _accum(x, np.real(_fft_data((1j * g).astype(np.complex128), inverse=True)) * (H * W))

    re = _make(np.ascontiguousarray(spec.real), (x,), None)
    im = _make(np.ascontiguousarray(spec.imag), (x,), None)
    re._backward = bwd_re if re.requires_grad else None
    im._backward = bwd_im if im.requires_grad else None
    return ComplexPlane(re, im)


def ifft2(x: ComplexPlane) -> ComplexPlane:
    """Inverse 2D DFT with the 1/(H*W) factor; input need not be Hermitian."""
    H, W = x.shape[-2], x.shape[-1]
    z = x.re.data + 1j * x.im.data
    spec = _fft_data(z, inverse=True)

    def make_bwd(phase):
        def bwd(g):
            adj = _fft_data((phase * g).astype(np.complex128), inverse=False) / (H * W)
            _accum(x.re, np.ascontiguousarray(adj.real))
            _accum(x.im, np.ascontiguousarray(adj.imag))

        return bwd

    re = _make(np.ascontiguousarray(spec.real), (x.re, x.im), None)
    im = _make(np.ascontiguousarray(spec.imag), (x.re, x.im), None)
    re._backward = make_bwd(1.0) if re.requires_grad else None
    im._backward = make_bwd(1j) if im.requires_grad else None
    return ComplexPlane(re, im)


def complex_to_real(x: ComplexPlane) -> Tensor:
    """Interleave re/im as channels: plane i -> channels (2i, 2i+1)."""
    *lead, C, H, W = x.shape
    r = reshape(x.re, (*lead, C, 1, H, W))
    i = reshape(x.im, (*lead, C, 1, H, W))
    return reshape(concat([r, i], axis=len(lead) + 1), (*lead, 2 * C, H, W))


def real_to_complex(x) -> ComplexPlane:
    """Inverse of complex_to_real; leading channel count must be even."""
    x = as_tensor(x)
    *lead, C2, H, W = x.shape
    if C2 % 2:
        raise ShapeError(f"real_to_complex needs an even channel count, got {C2}")
    y = reshape(x, (*lead, C2 // 2, 2, H, W))
    re, im = chunk(y, 2, axis=len(lead) + 1)
    shape = (*lead, C2 // 2, H, W)
    return ComplexPlane(reshape(re, shape), reshape(im, shape))


@dataclass(frozen=True)
class MeshIndex:
    """Permutation of flattened spectral positions, highest frequency first."""

    height: int
    width: int
    bands: int
    perm: np.ndarray = field(repr=False)

    @property
    def band_size(self) -> int:
        return self.height * self.width // self.bands

    def band_positions(self, band: int) -> np.ndarray:
        """Flat spectral positions belonging to one band (0 = highest)."""
        s = self.band_size
        return self.perm[band * s:(band + 1) * s]


def frequency_magnitudes(H: int, W: int) -> np.ndarray:
    """Wrap-around frequency magnitude per unshifted-FFT position, flattened."""
    u = np.arange(H)
    v = np.arange(W)
    fu = np.minimum(u, H - u) / H
    fv = np.minimum(v, W - v) / W
    return np.hypot(fu[:, None], fv[None, :]).ravel()


def build_mesh_index(H: int, W: int, b: int) -> MeshIndex:
    """Rank positions by descending frequency magnitude, ties by flat index."""
    if b < 1:
        raise ValueError(f"band count must be >= 1, got {b}")
    if (H * W) % b:
        raise ShapeError(f"band count {b} does not divide H*W = {H * W}")
    mag = frequency_magnitudes(H, W)
    perm = np.lexsort((np.arange(H * W), -mag))
    perm.setflags(write=False)
    return MeshIndex(H, W, b, perm)


def band_reorganize(x, m: MeshIndex) -> Tensor:
    """(..., C, H*W) -> (..., C*b, H*W/b): gather by rank, fold bands into channels."""
    x = as_tensor(x)
    *lead, C, L = x.shape
    if L != m.height * m.width:
        raise ShapeError(f"last axis {L} does not match mesh {m.height}x{m.width}")
    y = gather_cols(x, m.perm)
    return reshape(y, (*lead, C * m.bands, L // m.bands))


def band_restore(x, m: MeshIndex) -> Tensor:
    """Exact inverse of band_reorganize."""
    x = as_tensor(x)
    *lead, R, Lb = x.shape
    if R % m.bands:
        raise ShapeError(f"row count {R} is not a multiple of band count {m.bands}")
    if Lb != m.band_size:
        raise ShapeError(f"token length {Lb} does not match band size {m.band_size}")
    y = reshape(x, (*lead, R // m.bands, Lb * m.bands))
    return scatter_cols(y, m.perm)


def spectral_filter(x: ComplexPlane, weight: ComplexPlane, bias) -> ComplexPlane:
    """Complex elementwise filter with a resized weight plane and a real bias.

    weight planes (C, h, w) are bilinearly resized to the input's H x W,
    complex-multiplied with x, and bias (C,) is added to the real part.
    """
    bias = as_tensor(bias)
    H, W = x.shape[-2], x.shape[-1]
    wre = bilinear_resize(weight.re, H, W)
    wim = bilinear_resize(weight.im, H, W)
    bias3 = reshape(bias, bias.shape + (1, 1))
    out_re = x.re * wre - x.im * wim + bias3
    out_im = x.re * wim + x.im * wre
    return ComplexPlane(out_re, out_im)


def band_swap(rainy, clean, m: MeshIndex, low_bands: int) -> Tensor:
    """Replace the lowest-frequency bands of rainy's spectrum with clean's.

    Returns the real part of the inverse transform clamped to [0, 1].
    Demonstrates that rain-streak energy lives in the low-frequency bands.
    """
    rainy, clean = as_tensor(rainy), as_tensor(clean)
    if rainy.shape != clean.shape:
        raise ShapeError(f"image shapes differ: {rainy.shape} vs {clean.shape}")
    if not 0 <= low_bands <= m.bands:
        raise ValueError(f"low_bands must lie in [0, {m.bands}], got {low_bands}")
    C, H, W = rainy.shape
    fr = np.fft.fft2(rainy.data, axes=(-2, -1)).reshape(C, H * W)
    fc = np.fft.fft2(clean.data, axes=(-2, -1)).reshape(C, H * W)
    if low_bands:
        pos = m.perm[-low_bands * m.band_size:]
        fr[:, pos] = fc[:, pos]
    out = np.fft.ifft2(fr.reshape(C, H, W), axes=(-2, -1)).real
    return Tensor(np.clip(out, 0.0, 1.0))
