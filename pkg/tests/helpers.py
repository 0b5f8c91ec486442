"""Independent oracles shared by the test modules."""
import math
from collections import deque

import numpy as np


def naive_conv2d(x, w, b, stride, pad):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = b[oc]
                for ic in range(c):
                    for dy in range(k):
                        for dx in range(k):
                            acc += w[oc, ic, dy, dx] * xp[ic, i * stride + dy, j * stride + dx]
                out[oc, i, j] = acc
    return out


def window_scan(x, reducer):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = reducer([x[ch, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1)])
    return out


def bilinear_oracle(x):
    """Half-pixel bilinear 2x upsampling evaluated point by point."""
    c, h, w = x.shape
    out = np.zeros((c, 2 * h, 2 * w))

    def taps(o, n):
        s = max((o + 0.5) / 2 - 0.5, 0.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n - 1)
        return i0, i1, s - i0

    for i in range(2 * h):
        y0, y1, ly = taps(i, h)
        for j in range(2 * w):
            x0, x1, lx = taps(j, w)
            out[:, i, j] = ((1 - ly) * (1 - lx) * x[:, y0, x0] + (1 - ly) * lx * x[:, y0, x1]
                            + ly * (1 - lx) * x[:, y1, x0] + ly * lx * x[:, y1, x1])
    return out


def expected_edges(depth, i, j):
    """Enumerate fusion inputs straight from the three-direction rule."""
    dense = [(i, k) for k in range(j)]
    pooled = [(i - 1, j)] if i >= 1 else []
    upsampled = [(i + 1, j - 1)]
    return dense, pooled, upsampled


def finite_difference(f, arr, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric, indices=None):
    """Max abs deviation over the checked entries, scaled by the tensor's largest gradient."""
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    scale = max(np.max(np.abs(n)), np.max(np.abs(a)), 1e-8)
    if indices is not None:
        a, n = a[indices], n[indices]
    return float(np.max(np.abs(a - n)) / scale)


def bfs_components(mask):
    """Flood-fill partition of the 1-pixels as a set of frozensets."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not seen[r, c]:
                seen[r, c] = True
                q = deque([(r, c)])
                pix = []
                while q:
                    y, x = q.popleft()
                    pix.append((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                                seen[yy, xx] = True
                                q.append((yy, xx))
                comps.append(frozenset(pix))
    return comps


def iou_oracle(pred, gt):
    inter = union = 0
    for a, b in zip(np.asarray(pred, bool).ravel().tolist(), np.asarray(gt, bool).ravel().tolist()):
        inter += a and b
        union += a or b
    if union == 0:
        return 1.0
    return inter / union


def _centroid(pixels):
    rows = [p[0] for p in pixels]
    cols = [p[1] for p in pixels]
    return sum(rows) / len(rows), sum(cols) / len(cols)


def match_oracle(pred_mask, gt_mask, d_thresh):
    """Repeatedly take the globally closest unmatched (gt, pred) pair under the threshold.

    Returns (matched_count, t_all, false_pixels, n_pred).
    """
    gts = sorted(bfs_components(gt_mask), key=min)
    preds = sorted(bfs_components(pred_mask), key=min)
    gc = [_centroid(sorted(c)) for c in gts]
    pc = [_centroid(sorted(c)) for c in preds]
    free_g, free_p = set(range(len(gts))), set(range(len(preds)))
    matched = 0
    while True:
        best = None
        for g in sorted(free_g):
            for p in sorted(free_p):
                dev = math.hypot(gc[g][0] - pc[p][0], gc[g][1] - pc[p][1])
                if dev < d_thresh and (best is None or dev < best[0]):
                    best = (dev, g, p)
        if best is None:
            break
        free_g.discard(best[1])
        free_p.discard(best[2])
        matched += 1
    false_px = sum(len(preds[p]) for p in free_p)
    return matched, len(gts), false_px, len(preds)


def pd_fa_oracle(pred_mask, gt_mask, d_thresh=3.0):
    matched, t_all, false_px, n_pred = match_oracle(pred_mask, gt_mask, d_thresh)
    if t_all:
        pd = matched / t_all
    else:
        pd = 1.0 if n_pred == 0 else float("nan")
    return pd, false_px / np.asarray(gt_mask).size
