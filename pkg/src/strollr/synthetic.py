"""Synthetic test images for demos and validation runs."""

from __future__ import annotations

import numpy as np


def piecewise_phantom(size: int = 128, low: float = 60.0, high: float = 190.0) -> np.ndarray:
    """Piecewise-constant phantom: bright rectangle and disk on a flat field.

    Values stay well inside [0, 255] so additive noise rarely clips.
    """
    img = np.full((size, size), low, dtype=np.float64)
    q = size // 4
    img[q: 2 * q + q // 2, q: 2 * q] = high
    rr, cc = np.mgrid[0:size, 0:size]
    disk = (rr - 0.68 * size) ** 2 + (cc - 0.62 * size) ** 2 <= (0.18 * size) ** 2
    img[disk] = 0.5 * (low + high)
    img[: size // 8, :] = 0.75 * high
    return img


def smooth_phantom(size: int = 64) -> np.ndarray:
    """Smooth low-frequency image for MRI-style experiments, range [0, 1]."""
    rr, cc = np.mgrid[0:size, 0:size] / size
    img = 0.4 + 0.3 * np.sin(2 * np.pi * rr) * np.cos(2 * np.pi * cc)
    img += 0.25 * np.exp(-((rr - 0.5) ** 2 + (cc - 0.5) ** 2) / 0.02)
    disk = (rr - 0.3) ** 2 + (cc - 0.7) ** 2 <= 0.01
    img[disk] = 0.9
    return np.clip(img, 0.0, 1.0)


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return img + sigma * rng.standard_normal(img.shape)
