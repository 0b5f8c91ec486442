"""Process-level knobs: worker count and allocator tuning."""
from __future__ import annotations

import ctypes
import ctypes.util
import os
from concurrent.futures import ThreadPoolExecutor

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def worker_count() -> int:
    """Worker cap from ``SIRST_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SIRST_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """``map`` across up to ``worker_count()`` threads, preserving order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def tune_allocator() -> bool:
    """Keep large numpy buffers on the heap instead of fresh mmaps.

    Training allocates and frees the same large im2col buffers every step;
    glibc's default hands each one back to the kernel, so every step pays
    for page faults again.  No-op off glibc.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1
    ok &= mallopt(_M_TRIM_THRESHOLD, 1 << 31) == 1
    return bool(ok)
