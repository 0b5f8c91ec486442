"""From probability (or filter response) maps to labelled detections."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InputError

ADAPTIVE_MAX_FACTOR = 0.7
ADAPTIVE_STD_FACTOR = 0.5


def threshold_fixed(prob_map: np.ndarray, t: float) -> np.ndarray:
    """Binary mask of pixels strictly above ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {t}")
    return np.asarray(prob_map) > t


def adaptive_threshold_value(G: np.ndarray) -> float:
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0:
        raise InputError("empty map")
    return float(max(G.max() * ADAPTIVE_MAX_FACTOR, ADAPTIVE_STD_FACTOR * G.std() + G.mean()))


def threshold_adaptive(G: np.ndarray) -> tuple[np.ndarray, float]:
    """Threshold used for classical detectors: max(0.7 max, mean + 0.5 std)."""
    t = adaptive_threshold_value(G)
    return np.asarray(G) > t, t


@dataclass
class Component:
    id: int
    pixels: np.ndarray          # (area, 2) int rows/cols, row-major order
    centroid: tuple
    area: int
    bbox: tuple                 # (r0, c0, r1, c1), end-exclusive

    def to_dict(self, with_pixels=False):
        d = {"id": self.id, "area": self.area, "centroid": list(self.centroid), "bbox": list(self.bbox)}
        if with_pixels:
            d["pixels"] = self.pixels.tolist()
        return d

    @classmethod
    def from_pixels(cls, cid, pixels):
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if len(pixels) == 0:
            raise InputError("component without pixels")
        r, c = pixels[:, 0], pixels[:, 1]
        return cls(int(cid), pixels, (float(r.mean()), float(c.mean())), len(pixels),
                   (int(r.min()), int(c.min()), int(r.max()) + 1, int(c.max()) + 1))


@dataclass
class DetectionSet:
    components: list = field(default_factory=list)
    shape: tuple = (0, 0)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for comp in self.components:
            m[comp.pixels[:, 0], comp.pixels[:, 1]] = True
        return m

    def to_dict(self, with_pixels=True):
        return {"shape": list(self.shape),
                "components": [c.to_dict(with_pixels) for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        comps = [Component.from_pixels(c["id"], c["pixels"]) for c in d["components"]]
        return cls(comps, tuple(d["shape"]))


def label8(mask: np.ndarray) -> DetectionSet:
    """Eight-connected components, ids in row-major first-encounter order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InputError(f"expected a 2-D mask, got shape {mask.shape}")
    labels, count = kernels.label8(mask)
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, count + 2))
    w = mask.shape[1]
    comps = []
    for k in range(count):
        idx = order[bounds[k]:bounds[k + 1]]
        comps.append(Component.from_pixels(k + 1, np.stack([idx // w, idx % w], axis=1)))
    return DetectionSet(comps, mask.shape)


def centroids(ds: DetectionSet) -> list:
    return [c.centroid for c in ds.components]
