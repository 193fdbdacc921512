# tpgsr/metrics.py

from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_batch(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("metric operands differ in shape", [a.shape, b.shape])
    if a.ndim < 2:
        raise ShapeError("metrics need images with two spatial axes", [a.shape])
    return a.reshape(-1, *a.shape[-2:]), b.reshape(-1, *b.shape[-2:])


def psnr_per_sample(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _as_batch(a, b)
    mse = ((a - b) ** 2).mean(axis=(1, 2))
    out = np.full(mse.shape, PSNR_CAP_DB)
    ok = mse >= 1e-10
    out[ok] = 10.0 * np.log10(1.0 / mse[ok])
    return out


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for range 1.0, batch mean of per-image values."""
    return float(psnr_per_sample(a, b).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(images: np.ndarray, window: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(images, len(window), axis=1) @ window
    return sliding_window_view(rows, len(window), axis=2) @ window


def ssim_per_sample(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _as_batch(a, b)
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}", [a.shape])
    window = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a**2
    var_b = _filter_valid(b * b, window) - mu_b**2
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (numerator / denominator).mean(axis=(1, 2))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM (Gaussian window 11, sigma 1.5) over the window-valid region."""
    return float(ssim_per_sample(a, b).mean())
