"""Inference plumbing shared by the command line: detectors, score maps, overlays."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines
from . import net as N
from .baselines import FilterConfig
from .errors import ConfigError, InputError
from .imageops import normalize
from .pngio import read_gray, to_uint8
from .postproc import DetectionSet, label8, threshold_fixed
from .runtime import ordered_map
from .synth import load_split

DETECTOR_NAMES = ("network", "tophat", "maxmedian", "gt")


def predict_prob(params: N.NetworkParams, spec: N.NetworkSpec, image: np.ndarray) -> np.ndarray:
    """Probability map for an image in [0, 1] of any size.

    The normalized image is mirror-padded up to a multiple of ``2**depth``
    and the map is cropped back afterwards.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or 0 in image.shape:
        raise InputError(f"expected a non-empty 2-D image, got shape {image.shape}")
    div = 1 << spec.depth
    h, w = image.shape
    ph, pw = -h % div, -w % div
    x = normalize(image)
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="symmetric")
    return N.forward(x[None], params, spec).data[0, :h, :w]


@dataclass
class Detection:
    score: np.ndarray
    mask: np.ndarray
    threshold: float
    detections: DetectionSet


class Detector:
    """Uniform interface over the network and the classical filters.

    ``score`` gives a map in [0, 1] for threshold sweeps; ``detect`` applies
    the detector's own decision rule.
    """

    def __init__(self, name: str, checkpoint=None, filter_config: FilterConfig | None = None,
                 threshold: float = N.DECISION_THRESHOLD):
        if name not in DETECTOR_NAMES:
            raise ConfigError(f"unknown detector {name!r}; choose from {list(DETECTOR_NAMES)}")
        self.name = name
        self.filter_config = filter_config or FilterConfig()
        self.threshold = float(threshold)
        self.checkpoint = None
        if name == "network":
            if checkpoint is None:
                raise ConfigError("the network detector needs --checkpoint")
            self.checkpoint = checkpoint if isinstance(checkpoint, N.Checkpoint) else N.load_checkpoint(checkpoint)

    def score(self, image: np.ndarray, gt: np.ndarray | None = None) -> np.ndarray:
        if self.name == "network":
            return predict_prob(self.checkpoint.params, self.checkpoint.spec, image)
        if self.name == "gt":
            if gt is None:
                raise InputError("the gt detector needs ground-truth masks")
            return np.asarray(gt, dtype=np.float64)
        g = baselines.response(self.name, image, self.filter_config)
        top = g.max()
        return g / top if top > 0 else g

    def detect(self, image: np.ndarray, gt: np.ndarray | None = None) -> Detection:
        if self.name in ("tophat", "maxmedian"):
            g, mask, t, ds = baselines.detect(self.name, image, self.filter_config)
            top = g.max()
            return Detection(g / top if top > 0 else g, mask, t, ds)
        s = self.score(image, gt)
        t = 0.5 if self.name == "gt" else self.threshold
        mask = threshold_fixed(s, t)
        return Detection(s, mask, t, label8(mask))

    def describe(self) -> dict:
        d = {"name": self.name}
        if self.name == "network":
            d.update(spec=self.checkpoint.spec.to_dict(), step=self.checkpoint.step, threshold=self.threshold)
        elif self.name != "gt":
            d.update(filter={"tophat_structure": self.filter_config.tophat_structure,
                             "maxmedian_window": self.filter_config.maxmedian_window},
                     threshold="adaptive")
        return d


def score_maps(detector: Detector, images, gts=None) -> list:
    gts = gts if gts is not None else [None] * len(images)
    return ordered_map(lambda p: detector.score(*p), list(zip(images, gts)))


def run_detector(detector: Detector, images, gts=None) -> list:
    gts = gts if gts is not None else [None] * len(images)
    return ordered_map(lambda p: detector.detect(*p), list(zip(images, gts)))


def overlay(image: np.ndarray, mask: np.ndarray, gt: np.ndarray | None = None) -> np.ndarray:
    """RGB uint8: grey image, detections in red, ground truth in green."""
    g = to_uint8(np.asarray(image, dtype=np.float64))
    rgb = np.repeat(g[..., None], 3, axis=2)
    if gt is not None:
        rgb[np.asarray(gt, dtype=bool)] = (0, 255, 0)
    m = np.asarray(mask, dtype=bool)
    rgb[m] = (255, 0, 0)
    if gt is not None:
        rgb[m & np.asarray(gt, dtype=bool)] = (255, 255, 0)
    return rgb


# ------------------------------------------------------------------ inputs

def load_images(paths) -> tuple[list, list, list]:
    """Images, masks (or None) and names from PNG files, PNG folders or datasets.

    A folder holding a dataset ``manifest.json`` contributes its test split
    (or everything when the test split is empty) together with its masks.
    """
    images, masks, names = [], [], []
    for p in map(Path, paths):
        if (p / "manifest.json").is_file():
            manifest = json.loads((p / "manifest.json").read_text())
            split = "test" if manifest.get("splits", {}).get("test") else "all"
            im, mk, nm = load_split(p, split)
            images += im
            masks += mk
            names += nm
        elif p.is_dir():
            for f in sorted(p.glob("*.png")):
                images.append(read_gray(f))
                masks.append(None)
                names.append(f.stem)
        elif p.is_file():
            images.append(read_gray(p))
            masks.append(None)
            names.append(p.stem)
        else:
            raise OSError(f"no such input: {p}")
    if not images:
        raise InputError("no input images found")
    if len(set(names)) != len(names):
        raise InputError("input image names collide")
    return images, masks, names


def load_detections(root) -> dict:
    """``{name: DetectionSet}`` from a folder written by the detect command."""
    root = Path(root)
    files = sorted((root / "detections").glob("*.json"))
    if not files:
        raise OSError(f"no detection files under {root / 'detections'}")
    return {f.stem: DetectionSet.from_dict(json.loads(f.read_text())) for f in files}

