"""Structured tensor operations: convolution, normalization, resampling.

Conventions: channels-first layout (C, H, W) with an optional leading batch
axis; convolution is cross-correlation (no kernel flip); same-padding means
pad = dilation * (k - 1) // 2 with zeros.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _accum, _make, as_tensor, reshape, transpose


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def conv2d(x, weight, bias=None, stride: int = 1, padding=None, dilation: int = 1,
           groups: int = 1) -> Tensor:
    """2D cross-correlation.

    x: (C_in, H, W) or (B, C_in, H, W); weight: (C_out, C_in/groups, kh, kw);
    bias: (C_out,) or None.  padding defaults to same-padding for the given
    dilation; pass an int or (ph, pw).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4D, got shape {weight.shape}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be 3D or 4D, got shape {x.shape}")

    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    Cout, Cg, kh, kw = weight.shape
    if C % groups:
        raise ShapeError(f"groups={groups} does not divide C_in={C}")
    if Cout % groups:
        raise ShapeError(f"groups={groups} does not divide C_out={Cout}")
    if Cg != C // groups:
        raise ShapeError(f"weight expects {Cg} input channels per group, input supplies {C // groups}")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match C_out={Cout}")

    ph, pw = _pair(padding) if padding is not None else (dilation * (kh - 1) // 2, dilation * (kw - 1) // 2)
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    Ho = (H + 2 * ph - eh) // stride + 1
    Wo = (W + 2 * pw - ew) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} (dilation {dilation}) exceeds padded input {H + 2 * ph}x{W + 2 * pw}")

    G, Og = groups, Cout // groups
    wd = weight.data

    pointwise = kh == 1 and kw == 1 and stride == 1 and ph == 0 and pw == 0 and dilation == 1
    depthwise = groups == C and Og == 1 and not pointwise

    def fold_windows(gwin):
        """Scatter per-window grads (B, C, Ho, Wo, kh, kw) back to the input."""
        gxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw))
        for i in range(kh):
            hi = i * dilation
            for j in range(kw):
                wj = j * dilation
                gxp[:, :, hi:hi + stride * Ho:stride, wj:wj + stride * Wo:stride] += gwin[:, :, :, :, i, j]
        return gxp[:, :, ph:ph + H, pw:pw + W]

    if pointwise:
        col = xd.reshape(B, G, Cg, H * W)
        w2 = wd.reshape(G, Og, Cg)
        out = np.matmul(w2[None], col).reshape(B, Cout, H, W)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (eh, ew), axis=(2, 3))[:, :, ::stride, ::stride, ::dilation, ::dilation]
        if depthwise:
            # window-last col keeps the per-channel GEMV contiguous
            col = np.ascontiguousarray(win.reshape(B, C, Ho * Wo, kh * kw))
            out = np.matmul(col, wd.reshape(1, C, kh * kw, 1)).reshape(B, C, Ho, Wo)
        else:
            col = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, G, Cg * kh * kw, Ho * Wo)
            w2 = wd.reshape(G, Og, Cg * kh * kw)
            out = np.matmul(w2[None], col).reshape(B, Cout, Ho, Wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    if not batched:
        out = out[0]

    parents = (x, weight) if bias is None else (x, weight, bias)
    result = _make(out, parents, None)

    def bwd(g):
        gd = g if batched else g[None]
        if pointwise:
            gm = gd.reshape(B, G, Og, H * W)
            gw = np.matmul(gm, col.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wd.shape)
            gx = np.matmul(w2.transpose(0, 2, 1)[None], gm).reshape(B, C, H, W)
        elif depthwise:
            gm = gd.reshape(B, C, 1, Ho * Wo)
            gw = np.matmul(gm, col).sum(axis=0).reshape(wd.shape)
            gwin = gd[:, :, :, :, None] * wd.reshape(C, kh * kw)[None, :, None, None, :]
            gx = fold_windows(gwin.reshape(B, C, Ho, Wo, kh, kw))
        else:
            gm = gd.reshape(B, G, Og, Ho * Wo)
            gw = np.matmul(gm, col.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wd.shape)
            gcol = np.matmul(w2.transpose(0, 2, 1)[None], gm)
            gwin = gcol.reshape(B, C, kh, kw, Ho, Wo).transpose(0, 1, 4, 5, 2, 3)
            gx = fold_windows(gwin)
        _accum(x, gx if batched else gx[0])
        _accum(weight, gw)
        if bias is not None:
            _accum(bias, gd.sum(axis=(0, 2, 3)))

    result._backward = bwd if result.requires_grad else None
    return result


def conv1d_depthwise(x, weight, bias=None) -> Tensor:
    """Per-channel 1D cross-correlation with same-padding.

    x: (C, L); weight: (C, 1, k); bias: (C,) or None.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2:
        raise ShapeError(f"conv1d_depthwise input must be (C, L), got {x.shape}")
    C, L = x.shape
    if weight.shape[:2] != (C, 1):
        raise ShapeError(f"weight shape {weight.shape} does not match {C} channels")
    k = weight.shape[2]
    if k > L:
        raise ShapeError(f"kernel width {k} exceeds sequence length {L}")
    y = conv2d(reshape(x, (C, 1, L)), reshape(weight, (C, 1, 1, k)), bias,
               padding=(0, (k - 1) // 2), groups=C)
    return reshape(y, (C, L))


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis at each spatial position, then affine.

    x: (..., C, H, W); gamma/beta: (C,).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-3]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"affine shapes {gamma.shape}/{beta.shape} do not match {C} channels")
    from .tensor import tmean, tsqrt

    mu = tmean(x, axis=-3, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-3, keepdims=True)
    normed = centered / tsqrt(var + eps)
    shape = (C,) + (1,) * 2
    return normed * reshape(gamma, shape) + reshape(beta, shape)


def pixel_unshuffle(x, r: int) -> Tensor:
    """Space-to-channel: (..., C, H, W) -> (..., C*r*r, H/r, W/r)."""
    x = as_tensor(x)
    *lead, C, H, W = x.shape
    if H % r or W % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {H}x{W} not divisible by r={r}")
    n = len(lead)
    y = reshape(x, (*lead, C, H // r, r, W // r, r))
    y = transpose(y, tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
    return reshape(y, (*lead, C * r * r, H // r, W // r))


def pixel_shuffle(x, r: int) -> Tensor:
    """Channel-to-space inverse of pixel_unshuffle."""
    x = as_tensor(x)
    *lead, C, H, W = x.shape
    if C % (r * r):
        raise ShapeError(f"pixel_shuffle: channel dim {C} not divisible by r^2={r * r}")
    n = len(lead)
    y = reshape(x, (*lead, C // (r * r), r, r, H, W))
    y = transpose(y, tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2))
    return reshape(y, (*lead, C // (r * r), H * r, W * r))


def _resize_indices(src: int, dst: int):
    """Align-corners source indices and lerp weights for one axis."""
    if dst == 1 or src == 1:
        pos = np.zeros(dst)
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.minimum(i0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    w = pos - i0
    return i0, i1, w


def bilinear_resize(x, H: int, W: int) -> Tensor:
    """Align-corners bilinear interpolation of (..., C, h, w) to (..., C, H, W)."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    if (H, W) == (h, w):
        return x
    if (h < 2 and H != h) or (w < 2 and W != w):
        raise ShapeError(f"bilinear_resize needs source dims >= 2 to resize, got {h}x{w}")
    i0, i1, wy = _resize_indices(h, H)
    j0, j1, wx = _resize_indices(w, W)
    wy = wy.reshape(-1, 1)
    wx = wx.reshape(1, -1)

    xd = x.data
    rows = xd[..., i0, :] * (1.0 - wy)[:, 0][:, None] + xd[..., i1, :] * wy[:, 0][:, None]
    out = rows[..., j0] * (1.0 - wx)[0] + rows[..., j1] * wx[0]

    result = _make(out, (x,), None)

    def bwd(g):
        flat = g.reshape(-1, H, W)
        growsf = np.zeros((flat.shape[0], H, w))
        np.add.at(growsf, (slice(None), slice(None), j0), flat * (1.0 - wx)[0])
        np.add.at(growsf, (slice(None), slice(None), j1), flat * wx[0])
        gxf = np.zeros((flat.shape[0], h, w))
        np.add.at(gxf, (slice(None), i0, slice(None)), growsf * (1.0 - wy))
        np.add.at(gxf, (slice(None), i1, slice(None)), growsf * wy)
        _accum(x, gxf.reshape(x.data.shape))

    result._backward = bwd if result.requires_grad else None
    return result


def reflect_pad2d(x, pads: tuple[int, int, int, int]) -> Tensor:
    """Edge-excluding reflection pad; pads = (top, bottom, left, right)."""
    x = as_tensor(x)
    t, b, l, r = pads
    h, w = x.shape[-2], x.shape[-1]
    if max(t, b) > h - 1 or max(l, r) > w - 1:
        raise ShapeError(f"reflect pad {pads} too large for {h}x{w} input")
    rows = np.concatenate([np.arange(t, 0, -1), np.arange(h), np.arange(h - 2, h - 2 - b, -1)])
    cols = np.concatenate([np.arange(l, 0, -1), np.arange(w), np.arange(w - 2, w - 2 - r, -1)])
    out = x.data[..., rows[:, None], cols[None, :]]
    result = _make(out, (x,), None)

    def bwd(g):
        flat = g.reshape(-1, len(rows), len(cols))
        gx = np.zeros((flat.shape[0], h, w))
        n = np.arange(flat.shape[0])
        np.add.at(gx, (n[:, None, None], rows[None, :, None], cols[None, None, :]), flat)
        _accum(x, gx.reshape(x.data.shape))

    result._backward = bwd if result.requires_grad else None
    return result
