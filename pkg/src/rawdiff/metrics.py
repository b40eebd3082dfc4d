"""Reconstruction quality metrics: PSNR and SSIM on the luma (Y) channel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 99.0

# BT.601 full-range luma coefficients
_Y_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """Luma plane from a (3, H, W) image; a (1, H, W) image passes through."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {image.shape}")
    if image.shape[0] == 1:
        return image[0]
    if image.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {image.shape[0]}")
    return np.tensordot(_Y_WEIGHTS, image, axes=1)


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB over the luma channels, capped at PSNR_CAP_DB for identical inputs."""
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch: {ya.shape} vs {yb.shape}")
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_y(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
           k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Single-scale SSIM on luma with a Gaussian window, averaged over valid windows."""
    ya, yb = rgb_to_y(a).astype(np.float64), rgb_to_y(b).astype(np.float64)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch: {ya.shape} vs {yb.shape}")
    if min(ya.shape) < window_size:
        raise ValueError(f"image {ya.shape} smaller than {window_size}x{window_size} window")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    mu_a = convolve2d(ya, w, mode="valid")
    mu_b = convolve2d(yb, w, mode="valid")
    var_a = convolve2d(ya * ya, w, mode="valid") - mu_a**2
    var_b = convolve2d(yb * yb, w, mode="valid") - mu_b**2
    cov = convolve2d(ya * yb, w, mode="valid") - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def report(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr_db=psnr_y(a, b), ssim=ssim_y(a, b))
