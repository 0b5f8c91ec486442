"""Small image utilities shared by synthesis, augmentation and inference."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError


def gaussian_kernel5(sigma: float) -> np.ndarray:
    """Normalized 5x5 Gaussian; sigma <= 0 gives the identity kernel."""
    k = np.zeros((5, 5))
    if sigma <= 0:
        k[2, 2] = 1.0
        return k
    r = np.arange(-2, 3, dtype=np.float64)
    g = np.exp(-(r ** 2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """5x5 Gaussian convolution with reflect-padded borders."""
    image = np.asarray(image, dtype=np.float64)
    if sigma <= 0:
        return image.copy()
    k = gaussian_kernel5(sigma)
    padded = np.pad(image, 2, mode="reflect")
    h, w = image.shape
    out = np.zeros((h, w))
    for dy in range(5):
        for dx in range(5):
            out += k[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


@lru_cache(maxsize=64)
def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel centres, edge clamp
    a = np.zeros((n_out, n_in))
    s = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    s = np.clip(s, 0, n_in - 1)
    i0 = np.floor(s).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = s - i0
    a[np.arange(n_out), i0] += 1 - f
    a[np.arange(n_out), i1] += f
    a.setflags(write=False)
    return a


def resize_bilinear(image: np.ndarray, shape: tuple) -> np.ndarray:
    h, w = shape
    ih, iw = image.shape
    return _resize_matrix(h, ih) @ image @ _resize_matrix(w, iw).T


def resize_nearest(image: np.ndarray, shape: tuple) -> np.ndarray:
    h, w = shape
    ih, iw = image.shape
    rows = np.minimum(((np.arange(h) + 0.5) * ih / h).astype(int), ih - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * iw / w).astype(int), iw - 1)
    return image[np.ix_(rows, cols)]


def normalize(image: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; flat images map to zeros."""
    image = np.asarray(image, dtype=np.float64)
    std = image.std()
    centred = image - image.mean()
    return centred / std if std > 0 else centred


def check_odd(size: int, name: str, minimum: int = 1) -> int:
    if int(size) != size or size < minimum or size % 2 == 0:
        raise ConfigError(f"{name} must be an odd integer >= {minimum}, got {size}")
    return int(size)
