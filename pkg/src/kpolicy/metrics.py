"""Image-quality criteria (SSIM, PSNR) and the per-step acquisition reward."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

GAUSSIAN_11 = "gaussian_11_sigma_1_5"
UNIFORM_7 = "uniform_7"


@dataclass(frozen=True)
class SsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    window: str = GAUSSIAN_11
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        if self.window not in (GAUSSIAN_11, UNIFORM_7):
            raise ValueError(f"unknown window {self.window!r}")


@lru_cache(maxsize=None)
def _window_kernel(window: str) -> np.ndarray:
    if window == GAUSSIAN_11:
        half = 5
        ax = np.arange(-half, half + 1, dtype=float)
        g = np.exp(-(ax**2) / (2 * 1.5**2))
        k = np.outer(g, g)
    else:
        k = np.ones((7, 7))
    k = k / k.sum()
    k.setflags(write=False)
    return k


def ssim(reference: np.ndarray, test: np.ndarray, cfg: SsimConfig) -> float:
    """Mean local SSIM over all fully valid window positions (no padding).

    Local statistics are window-weighted means/variances/covariance; the
    window is either an 11x11 Gaussian (sigma 1.5) or a uniform 7x7.
    """
    reference = np.asarray(reference, dtype=float)
    test = np.asarray(test, dtype=float)
    if reference.shape != test.shape:
        raise ValueError(
            f"shape mismatch: {reference.shape} vs {test.shape}"
        )
    kernel = _window_kernel(cfg.window)
    if reference.shape[0] < kernel.shape[0] or reference.shape[1] < kernel.shape[1]:
        raise ValueError(
            f"image {reference.shape} smaller than window {kernel.shape}"
        )

    mu_x = convolve2d(reference, kernel, mode="valid")
    mu_y = convolve2d(test, kernel, mode="valid")
    var_x = convolve2d(reference**2, kernel, mode="valid") - mu_x**2
    var_y = convolve2d(test**2, kernel, mode="valid") - mu_y**2
    cov = convolve2d(reference * test, kernel, mode="valid") - mu_x * mu_y

    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(reference: np.ndarray, test: np.ndarray, dynamic_range: float) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    reference = np.asarray(reference, dtype=float)
    test = np.asarray(test, dtype=float)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(dynamic_range**2 / mse)


def reward(prev_score: float, new_score: float) -> float:
    """Improvement in reconstruction quality from one acquisition step."""
    if not (math.isfinite(prev_score) and math.isfinite(new_score)):
        raise ValueError("scores must be finite")
    return new_score - prev_score
