"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``SIRSTLAB_BACKEND=python`` is set.  Every function here has a twin with an
identical signature in ``_ckernels.pyx``.
"""
from collections import deque

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    """Unfold ``x`` of shape (N, C, H, W) into a (C*k*k, N*Ho*Wo) matrix."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, ho, wo), dtype=np.float64)
    for dy in range(k):
        ys = slice(dy, dy + stride * (ho - 1) + 1, stride)
        for dx in range(k):
            xs = slice(dx, dx + stride * (wo - 1) + 1, stride)
            cols[:, dy, dx] = xp[:, :, ys, xs].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to an image."""
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for dy in range(k):
        ys = slice(dy, dy + stride * (ho - 1) + 1, stride)
        for dx in range(k):
            xs = slice(dx, dx + stride * (wo - 1) + 1, stride)
            xp[:, :, ys, xs] += cols[:, dy, dx].transpose(1, 0, 2, 3)
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def maxpool2_forward(x):
    """2x2/stride-2 max pooling on (N, C, H, W).

    Returns the pooled map and the in-window argmax (0..3, row-major, first
    maximum wins).
    """
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(g, idx):
    n, c, ho, wo = g.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(win, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win.reshape(n, c, 2 * ho, 2 * wo))


_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def label8(mask):
    """Eight-connected labeling of a 2-D binary mask.

    Labels start at 1 and are assigned in the row-major order in which each
    component's first pixel is met.  Returns ``(labels, count)``.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for r, c in zip(*np.nonzero(mask)):
        if labels[r, c]:
            continue
        count += 1
        labels[r, c] = count
        queue = deque([(r, c)])
        while queue:
            y, x = queue.popleft()
            for dy, dx in _NEIGHBOURS:
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not labels[yy, xx]:
                    labels[yy, xx] = count
                    queue.append((yy, xx))
    return labels, count


def _reflect(img, r):
    return np.pad(np.asarray(img, dtype=np.float64), r, mode="reflect")


def min_filter(img, size):
    r = size // 2
    return sliding_window_view(_reflect(img, r), (size, size)).min(axis=(-2, -1))


def max_filter(img, size):
    r = size // 2
    return sliding_window_view(_reflect(img, r), (size, size)).max(axis=(-2, -1))


def directional_median_max(img, window):
    """Max over the medians of the horizontal, vertical and two diagonal lines."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = window // 2
    p = _reflect(img, r)
    offs = np.arange(-r, r + 1)
    lines = []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        stack = np.stack(
            [p[r + dy * o:r + dy * o + h, r + dx * o:r + dx * o + w] for o in offs]
        )
        lines.append(np.median(stack, axis=0))
    return np.max(lines, axis=0)
