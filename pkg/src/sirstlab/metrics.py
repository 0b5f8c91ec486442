"""Pixel IoU, target-level Pd / Fa under centroid matching, and ROC sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError
from .postproc import DetectionSet, label8, threshold_fixed

DEFAULT_D_THRESH = 3.0


def _pair(pred, gt):
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask extents differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred & gt| / |pred | gt|; 1.0 if both are empty."""
    pred, gt = _pair(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


@dataclass
class MatchResult:
    pairs: list                 # (gt_index, pred_id, deviation)
    unmatched_gt: list
    unmatched_pred: list
    d_thresh: float = DEFAULT_D_THRESH


def match_targets(pred: DetectionSet, gt: DetectionSet, d_thresh: float = DEFAULT_D_THRESH) -> MatchResult:
    """Greedy nearest-centroid matching; deviations must be strictly below ``d_thresh``."""
    if tuple(pred.shape) != tuple(gt.shape):
        raise ShapeError(f"detection extents differ: {pred.shape} vs {gt.shape}")
    cand = []
    for gi, g in enumerate(gt.components):
        for p in pred.components:
            dev = math.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1])
            if dev < d_thresh:
                cand.append((dev, gi, p.id))
    cand.sort()
    used_g, used_p, pairs = set(), set(), []
    for dev, gi, pid in cand:
        if gi in used_g or pid in used_p:
            continue
        used_g.add(gi)
        used_p.add(pid)
        pairs.append((gi, pid, dev))
    return MatchResult(pairs,
                       [i for i in range(len(gt.components)) if i not in used_g],
                       [p.id for p in pred.components if p.id not in used_p],
                       d_thresh)


def pd(match: MatchResult, t_all: int) -> float:
    """Matched targets over all targets; NaN when undefined (no targets, some predictions)."""
    if t_all < len(match.pairs):
        raise InputError("t_all is smaller than the number of matched targets")
    if t_all == 0:
        return 1.0 if not match.unmatched_pred else math.nan
    return len(match.pairs) / t_all


def false_pixels(pred: DetectionSet, match: MatchResult) -> int:
    unmatched = set(match.unmatched_pred)
    return sum(c.area for c in pred.components if c.id in unmatched)


def fa(pred: DetectionSet, match: MatchResult, extents) -> float:
    """Pixels of unmatched predicted components over all image pixels."""
    h, w = extents
    return false_pixels(pred, match) / (h * w)


@dataclass
class ImageCounts:
    inter: int
    union: int
    t_correct: int
    t_all: int
    p_false: int
    p_all: int
    n_pred: int

    def __add__(self, other):
        return ImageCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.inter, self.union, self.t_correct, self.t_all, self.p_false, self.p_all, self.n_pred)


def image_counts(pred_mask, gt_mask, d_thresh: float = DEFAULT_D_THRESH,
                 pred: DetectionSet | None = None, gt: DetectionSet | None = None) -> ImageCounts:
    pred_mask, gt_mask = _pair(pred_mask, gt_mask)
    pred = pred if pred is not None else label8(pred_mask)
    gt = gt if gt is not None else label8(gt_mask)
    m = match_targets(pred, gt, d_thresh)
    return ImageCounts(int(np.count_nonzero(pred_mask & gt_mask)), int(np.count_nonzero(pred_mask | gt_mask)),
                       len(m.pairs), len(gt), false_pixels(pred, m), pred_mask.size, len(pred))


@dataclass
class MetricsReport:
    iou: float
    pd: float
    fa: float
    counts: dict
    d_thresh: float = DEFAULT_D_THRESH
    pd_defined: bool = True
    roc_points: list = field(default_factory=list)
    per_image: list = field(default_factory=list)

    def to_dict(self):
        return {"iou": self.iou, "pd": None if math.isnan(self.pd) else self.pd, "fa": self.fa,
                "pd_defined": self.pd_defined, "d_thresh": self.d_thresh, "counts": self.counts,
                "roc_points": [list(p) for p in self.roc_points], "per_image": self.per_image}


def report_from_counts(total: ImageCounts, d_thresh: float, per_image=None) -> MetricsReport:
    """Dataset-level metrics from pooled counts (sums, not averages of ratios)."""
    iou_v = total.inter / total.union if total.union else 1.0
    if total.t_all:
        pd_v, ok = total.t_correct / total.t_all, True
    else:
        pd_v, ok = (1.0, True) if total.n_pred == 0 else (math.nan, False)
    fa_v = total.p_false / total.p_all if total.p_all else 0.0
    counts = {"intersection": total.inter, "union": total.union, "T_correct": total.t_correct,
              "T_all": total.t_all, "P_false": total.p_false, "P_all": total.p_all,
              "predicted_components": total.n_pred}
    return MetricsReport(iou_v, pd_v, fa_v, counts, d_thresh, ok, per_image=per_image or [])


def evaluate(pred_masks, gt_masks, d_thresh: float = DEFAULT_D_THRESH, names=None) -> MetricsReport:
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks):
        raise InputError(f"{len(pred_masks)} predictions for {len(gt_masks)} ground-truth masks")
    total = ImageCounts(0, 0, 0, 0, 0, 0, 0)
    per = []
    for k, (p, g) in enumerate(zip(pred_masks, gt_masks)):
        c = image_counts(p, g, d_thresh)
        total = total + c
        per.append({"name": names[k] if names else str(k), **dict(zip(
            ("intersection", "union", "T_correct", "T_all", "P_false", "P_all", "predicted_components"),
            c.astuple()))})
    return report_from_counts(total, d_thresh, per)


def roc(prob_maps, gt_masks, thresholds, d_thresh: float = DEFAULT_D_THRESH) -> list:
    """One pooled (fa, pd) point per threshold."""
    prob_maps, gt_masks = list(prob_maps), list(gt_masks)
    if len(prob_maps) != len(gt_masks):
        raise InputError(f"{len(prob_maps)} maps for {len(gt_masks)} ground-truth masks")
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise InputError("thresholds must be sorted")
    gts = [label8(g) for g in gt_masks]
    points = []
    for t in thresholds:
        total = ImageCounts(0, 0, 0, 0, 0, 0, 0)
        for pm, g, gds in zip(prob_maps, gt_masks, gts):
            total = total + image_counts(threshold_fixed(pm, t), g, d_thresh, gt=gds)
        r = report_from_counts(total, d_thresh)
        points.append((r.fa, r.pd))
    return points
