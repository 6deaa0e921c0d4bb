"""Perceptual distances between grayscale images.

Any callable ``metric(a, b) -> per-image distances`` over arrays of shape
``(..., H, W)`` can be used by the scoring code; the default is
``1 - MS-SSIM`` with three scales, standing in for LPIPS.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import RejectedInputError

# Standard five-scale MS-SSIM exponents; the first ``scales`` are renormalized.
_MS_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def _filter(x, sigma):
    axes = (x.ndim - 2, x.ndim - 1)
    return gaussian_filter(x, sigma=sigma, axes=axes, mode="reflect", truncate=3.5)


def ssim_components(a, b, data_range=1.0, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM and mean contrast-structure term per image."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter(a, sigma), _filter(b, sigma)
    var_a = _filter(a * a, sigma) - mu_a**2
    var_b = _filter(b * b, sigma) - mu_b**2
    cov = _filter(a * b, sigma) - mu_a * mu_b
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return (lum * cs).mean(axis=(-2, -1)), cs.mean(axis=(-2, -1))


def _downsample(x):
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim(a, b, scales: int = 3, data_range: float = 1.0) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise RejectedInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < 2 ** (scales - 1):
        raise RejectedInputError(f"images too small for {scales} scales")
    weights = _MS_WEIGHTS[:scales] / _MS_WEIGHTS[:scales].sum()
    out = np.ones(a.shape[:-2])
    for j, w in enumerate(weights):
        ssim, cs = ssim_components(a, b, data_range)
        term = ssim if j == scales - 1 else cs
        # Negative structure correlation would make fractional powers undefined.
        out = out * np.maximum(term, 0.0) ** w
        a, b = _downsample(a), _downsample(b)
    return out


def msssim_distance(a, b) -> np.ndarray:
    """``1 - MS-SSIM`` (three scales), in [0, 1]; zero for identical images."""
    return 1.0 - ms_ssim(a, b, scales=3)
