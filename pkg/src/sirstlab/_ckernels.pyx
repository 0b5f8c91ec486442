# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Same signatures and results as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((c * k * k, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t ci, dy, dx, b, oy, ox, iy, ix, row, base
    with nogil:
        for ci in range(c):
            for dy in range(k):
                for dx in range(k):
                    row = (ci * k + dy) * k + dx
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + dy - pad
                            if iy < 0 or iy >= h:
                                continue
                            base = (b * ho + oy) * wo
                            for ox in range(wo):
                                ix = ox * stride + dx - pad
                                if 0 <= ix < w:
                                    cols[row, base + ox] = x[b, ci, iy, ix]
    return out


def col2im(cols_in, shape, int k, int stride, int pad):
    cdef double[:, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64)
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t ci, dy, dx, b, oy, ox, iy, ix, row, base
    with nogil:
        for ci in range(c):
            for dy in range(k):
                for dx in range(k):
                    row = (ci * k + dy) * k + dx
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + dy - pad
                            if iy < 0 or iy >= h:
                                continue
                            base = (b * ho + oy) * wo
                            for ox in range(wo):
                                ix = ox * stride + dx - pad
                                if 0 <= ix < w:
                                    x[b, ci, iy, ix] += cols[row, base + ox]
    return out


def maxpool2_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    idx = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int8_t[:, :, :, ::1] ix = idx
    cdef Py_ssize_t b, ci, i, j
    cdef double best, v
    cdef cnp.int8_t arg
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, ci, 2 * i, 2 * j]
                        arg = 0
                        v = x[b, ci, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[b, ci, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[b, ci, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 3
                        o[b, ci, i, j] = best
                        ix[b, ci, i, j] = arg
    return out, idx


def maxpool2_backward(const double[:, :, :, ::1] g, const cnp.int8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    out = np.zeros((n, c, 2 * ho, 2 * wo), dtype=np.float64)
    cdef double[:, :, :, ::1] d = out
    cdef Py_ssize_t b, ci, i, j
    cdef int a
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        a = idx[b, ci, i, j]
                        d[b, ci, 2 * i + a // 2, 2 * j + a % 2] = g[b, ci, i, j]
    return out


def label8(mask_in):
    cdef cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(mask_in, dtype=bool).view(np.uint8)
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] lab = labels
    cdef Py_ssize_t total = h * w
    cdef Py_ssize_t *queue = <Py_ssize_t *> malloc(max(total, 1) * sizeof(Py_ssize_t))
    if queue == NULL:
        raise MemoryError()
    cdef Py_ssize_t r, c, head, tail, p, y, x, yy, xx
    cdef int dy, dx
    cdef cnp.int32_t count = 0
    try:
        with nogil:
            for r in range(h):
                for c in range(w):
                    if mask[r, c] == 0 or lab[r, c] != 0:
                        continue
                    count += 1
                    lab[r, c] = count
                    head = 0
                    tail = 1
                    queue[0] = r * w + c
                    while head < tail:
                        p = queue[head]
                        head += 1
                        y = p // w
                        x = p % w
                        for dy in range(-1, 2):
                            yy = y + dy
                            if yy < 0 or yy >= h:
                                continue
                            for dx in range(-1, 2):
                                xx = x + dx
                                if xx < 0 or xx >= w:
                                    continue
                                if mask[yy, xx] != 0 and lab[yy, xx] == 0:
                                    lab[yy, xx] = count
                                    queue[tail] = yy * w + xx
                                    tail += 1
    finally:
        free(queue)
    return labels, int(count)


cdef inline Py_ssize_t _refl(Py_ssize_t i, Py_ssize_t n) nogil:
    # numpy "reflect" padding (edge sample not repeated)
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
    return i


def _extremum_filter(img_in, int size, bint take_max):
    cdef double[:, ::1] img = np.ascontiguousarray(img_in, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef int r = size // 2
    # separable: rows then columns
    tmp = np.empty((h, w), dtype=np.float64)
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] t = tmp
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef int q
    cdef double best, v
    with nogil:
        for i in range(h):
            for j in range(w):
                best = img[i, _refl(j - r, w)]
                for q in range(-r + 1, r + 1):
                    v = img[i, _refl(j + q, w)]
                    if (v > best) if take_max else (v < best):
                        best = v
                t[i, j] = best
        for i in range(h):
            for j in range(w):
                best = t[_refl(i - r, h), j]
                for q in range(-r + 1, r + 1):
                    v = t[_refl(i + q, h), j]
                    if (v > best) if take_max else (v < best):
                        best = v
                o[i, j] = best
    return out


def min_filter(img, int size):
    return _extremum_filter(img, size, False)


def max_filter(img, int size):
    return _extremum_filter(img, size, True)


cdef inline double _median(double *buf, int m) nogil:
    # insertion sort; m is small and odd
    cdef int a, b
    cdef double key
    for a in range(1, m):
        key = buf[a]
        b = a - 1
        while b >= 0 and buf[b] > key:
            buf[b + 1] = buf[b]
            b -= 1
        buf[b + 1] = key
    return buf[m // 2]


def directional_median_max(img_in, int window):
    cdef double[:, ::1] img = np.ascontiguousarray(img_in, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef int r = window // 2
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double *buf = <double *> malloc(window * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef int dys[4]
    cdef int dxs[4]
    dys[:] = [0, 1, 1, 1]
    dxs[:] = [1, 0, 1, -1]
    cdef Py_ssize_t i, j
    cdef int d, q
    cdef double best, med
    try:
        with nogil:
            for i in range(h):
                for j in range(w):
                    best = -1e308
                    for d in range(4):
                        for q in range(-r, r + 1):
                            buf[q + r] = img[_refl(i + dys[d] * q, h), _refl(j + dxs[d] * q, w)]
                        med = _median(buf, window)
                        if med > best:
                            best = med
                    o[i, j] = best
    finally:
        free(buf)
    return out
