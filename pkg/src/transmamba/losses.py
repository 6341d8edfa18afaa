"""Training objectives (L1 + spectral coherence) and evaluation metrics.

The coherence score G compares magnitude spectra: it is the squared
normalized cross-spectral density, lies in [0, 1] by Cauchy-Schwarz,
reaches 1 exactly for proportional magnitude spectra and 0 for disjoint
spectral support.  Losses return Tensors on the graph; PSNR and SSIM are
plain float metrics.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spectral import fft2
from .tensor import ShapeError, Tensor, as_tensor, tabs, tmean, tsqrt, tsum

_EPS = 1e-12


class LossWeights:
    def __init__(self, alpha: float = 5.0, coherence_per_channel: bool = False):
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        self.alpha = alpha
        self.coherence_per_channel = coherence_per_channel


def _check_same_shape(pred, target, op):
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: shapes differ, {pred.shape} vs {target.shape}")


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error (mean, so the loss is resolution-independent)."""
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same_shape(pred, target, "l1_loss")
    return tmean(tabs(pred - target))


def coherence(pred, target, per_channel: bool = False) -> Tensor:
    """Squared normalized cross-spectral density G in [0, 1].

    G = (sum |X conj(Y)|)^2 / (sum |X|^2 * sum |Y|^2) with X, Y the 2D
    spectra of pred and target.  Sums pool over channels and frequencies
    jointly unless per_channel is set, in which case per-channel ratios
    are averaged.  If either signal is identically zero, G is defined as
    0 and a warning is emitted.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same_shape(pred, target, "coherence")
    X = fft2(pred)
    Y = fft2(target)
    power_x = X.re * X.re + X.im * X.im
    power_y = Y.re * Y.re + Y.im * Y.im
    cross_re = X.re * Y.re + X.im * Y.im
    cross_im = X.im * Y.re - X.re * Y.im
    cross_mag = tsqrt(cross_re * cross_re + cross_im * cross_im)

    axes = (-2, -1) if per_channel else None
    sum_x = tsum(power_x, axis=axes)
    sum_y = tsum(power_y, axis=axes)
    num = tsum(cross_mag, axis=axes)
    if float(np.min(sum_x.data)) < _EPS or float(np.min(sum_y.data)) < _EPS:
        warnings.warn("coherence: a signal is identically zero; defining G = 0")
        return Tensor(0.0)
    g = (num * num) / (sum_x * sum_y)
    return tmean(g) if per_channel else g


def coherence_loss(pred, target, per_channel: bool = False) -> Tensor:
    """1 - sqrt(G); zero exactly when the magnitude spectra are proportional."""
    return 1.0 - tsqrt(coherence(pred, target, per_channel))


def total_loss(pred, target, weights: LossWeights) -> Tensor:
    loss = l1_loss(pred, target)
    if weights.alpha > 0:
        loss = loss + weights.alpha * coherence_loss(pred, target, weights.coherence_per_channel)
    return loss


# ----------------------------------------------------------------------
# metrics (plain numpy)
# ----------------------------------------------------------------------
def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def psnr(pred, target, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 100 dB when MSE < 1e-10."""
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"psnr: shapes differ, {p.shape} vs {t.shape}")
    mse = float(np.mean((p - t) ** 2))
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_mean(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, (len(k), len(k)))
    return np.einsum("hwij,i,j->hw", win, k, k)


def ssim(pred, target, peak: float = 1.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03.

    Computed per channel then averaged; inputs are (3, H, W) or (H, W)
    with H, W >= 11.
    """
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"ssim: shapes differ, {p.shape} vs {t.shape}")
    if p.ndim == 2:
        p, t = p[None], t[None]
    if p.shape[-1] < 11 or p.shape[-2] < 11:
        raise ShapeError(f"ssim needs at least 11x11 images, got {p.shape[-2]}x{p.shape[-1]}")
    k = _gaussian_kernel()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for c in range(p.shape[0]):
        x, y = p[c], t[c]
        mu_x = _window_mean(x, k)
        mu_y = _window_mean(y, k)
        var_x = _window_mean(x * x, k) - mu_x * mu_x
        var_y = _window_mean(y * y, k) - mu_y * mu_y
        cov = _window_mean(x * y, k) - mu_x * mu_y
        score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / \
                ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
        vals.append(float(score.mean()))
    return float(np.mean(vals))
