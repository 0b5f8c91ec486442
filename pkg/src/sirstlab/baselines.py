"""Classical single-frame detectors: white top-hat and max-median."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .imageops import check_odd
from .postproc import DetectionSet, label8, threshold_adaptive


@dataclass(frozen=True)
class FilterConfig:
    tophat_structure: int = 5
    maxmedian_window: int = 5

    def __post_init__(self):
        check_odd(self.tophat_structure, "tophat_structure", 3)
        check_odd(self.maxmedian_window, "maxmedian_window", 3)


def tophat(image: np.ndarray, structure: int = 5) -> np.ndarray:
    """image - opening(image) with a flat square element; reflect borders."""
    check_odd(structure, "structure", 3)
    image = np.asarray(image, dtype=np.float64)
    opened = kernels.max_filter(kernels.min_filter(image, structure), structure)
    return np.maximum(image - opened, 0.0)


def maxmedian(image: np.ndarray, window: int = 5) -> np.ndarray:
    """image - max of the four directional medians, clamped at zero."""
    check_odd(window, "window", 3)
    image = np.asarray(image, dtype=np.float64)
    return np.maximum(image - kernels.directional_median_max(image, window), 0.0)


DETECTORS = {"tophat": tophat, "maxmedian": maxmedian}


def response(name: str, image: np.ndarray, config: FilterConfig | None = None) -> np.ndarray:
    config = config or FilterConfig()
    if name == "tophat":
        return tophat(image, config.tophat_structure)
    if name == "maxmedian":
        return maxmedian(image, config.maxmedian_window)
    raise ConfigError(f"unknown detector {name!r}; choose from {sorted(DETECTORS)}")


def detect(name: str, image: np.ndarray, config: FilterConfig | None = None):
    """Filter response, adaptive-threshold mask, threshold and detections."""
    g = response(name, image, config)
    mask, t = threshold_adaptive(g)
    return g, mask, t, label8(mask)
