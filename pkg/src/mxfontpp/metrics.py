"""Image similarity metrics on [0, 1] grayscale glyphs."""
from __future__ import annotations

import numpy as np

from . import kernels

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def rmse_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _as_plane(x: np.ndarray) -> np.ndarray:
    # accept (H, W) or a single-channel (1, H, W)
    if x.ndim == 3 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 2:
        raise ValueError(f"ssim expects a single-channel image, got shape {x.shape}")
    return x


def ssim_map(a, b, win: int = SSIM_WINDOW) -> np.ndarray:
    """Local SSIM over every ``win``×``win`` window (stride 1, uniform weights)."""
    a, b = _pair(a, b)
    a, b = _as_plane(a), _as_plane(b)
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} is smaller than the {win}x{win} window")
    mu_a = kernels.window_mean(a, win)
    mu_b = kernels.window_mean(b, win)
    # population (co)variances from window means of products
    var_a = kernels.window_mean(a * a, win) - mu_a * mu_a
    var_b = kernels.window_mean(b * b, win) - mu_b * mu_b
    cov = kernels.window_mean(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim_metric(a, b, win: int = SSIM_WINDOW) -> float:
    return float(np.mean(ssim_map(a, b, win)))
