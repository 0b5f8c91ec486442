"""PNG reading and writing for images, masks and probability maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _prep(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_gray8(path, image: np.ndarray) -> Path:
    """Float image in [0, 1] as 8-bit grayscale."""
    path = _prep(path)
    Image.fromarray(to_uint8(image), mode="L").save(path, optimize=False)
    return path


def write_mask(path, mask: np.ndarray) -> Path:
    path = _prep(path)
    Image.fromarray(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8), mode="L").save(path)
    return path


def write_prob16(path, prob: np.ndarray) -> Path:
    """Probability map scaled by 65535; quantization error at most 1/65535."""
    path = _prep(path)
    q = np.round(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)
    return path


def write_rgb(path, rgb: np.ndarray) -> Path:
    path = _prep(path)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
    return path


def read_gray(path) -> np.ndarray:
    """Grayscale image scaled to [0, 1]; 8- and 16-bit inputs."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    return read_gray(path) > 0.5
