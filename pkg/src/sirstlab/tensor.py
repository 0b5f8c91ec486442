"""Minimal float64 tensor engine with tape-based reverse-mode differentiation.

Feature maps are ``(C, H, W)`` or batched ``(N, C, H, W)``; every spatial
op accepts both.  Operations are only recorded while a :class:`Tape` is
active, so plain inference never builds a graph::

    with Tape() as tape:
        loss = soft_iou_loss(net(x), y)
    tape.backward(loss)
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, StaleTapeError

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def backward(self):
        if self._tape is None:
            raise StaleTapeError("tensor was not produced on an active tape")
        self._tape.backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


@dataclass
class Parameter:
    """A named learnable tensor plus its Adagrad accumulator."""

    name: str
    tensor: Tensor
    accumulator: np.ndarray = field(default=None)

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.accumulator is None:
            self.accumulator = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape


class Tape:
    """Records differentiable operations in execution order."""

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def reset(self):
        self._records = []
        self._consumed = False

    def record(self, out, parents, backward_fn):
        out.requires_grad = True
        out._tape = self
        self._records.append((out, parents, backward_fn))

    def backward(self, loss: Tensor):
        if self._consumed:
            raise StaleTapeError("tape already consumed; run a new forward pass first")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise StaleTapeError("loss was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                if p._tape is self:
                    key = id(p)
                    grads[key] = grads[key] + pg if key in grads else pg
                elif p.grad is None:
                    p.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    p.grad += pg
        self._consumed = True
        self._records = []


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def _to4d(a):
    if a.ndim == 3:
        return a[None], True
    if a.ndim == 4:
        return a, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {a.shape}")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(
        out, (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def tmean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _result(np.array(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),))


# ----------------------------------------------------------------- activations

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(np.maximum(x.data, 0.0), (x,), lambda g: (g * pos,))


_SIG_HI = 1.0 - 2.0 ** -53
_SIG_LO = np.finfo(np.float64).tiny


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(y, _SIG_LO, _SIG_HI)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


# ----------------------------------------------------------------- layers

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.  ``weight`` is (O, C, K, K); K must be odd."""
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    o, cw, k, k2 = weight.shape
    if cw != c:
        raise ShapeError(f"input has {c} channels but weight expects {cw}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd side, got {k}x{k2}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("convolution output would be empty")
    if k == 1 and stride == 1 and padding == 0:
        cols = xd.transpose(1, 0, 2, 3).reshape(c, -1)
    else:
        cols = kernels.im2col(xd, k, stride, padding)
    wm = weight.data.reshape(o, -1)
    out = (wm @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def backward(g):
        g4 = g[None] if squeeze else g
        gm = g4.transpose(1, 0, 2, 3).reshape(o, -1)
        dw = (gm @ cols.T).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            if k == 1 and stride == 1 and padding == 0:
                dx = (wm.T @ gm).reshape(c, n, h, w).transpose(1, 0, 2, 3)
            elif stride == 1 and o < c and 2 * padding <= 2 * (k - 1):
                # full correlation with the flipped kernel; unfolds O rather than C channels
                wf = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                gcols = kernels.im2col(np.ascontiguousarray(g4), k, 1, k - 1 - padding)
                dx = (wf @ gcols).reshape(c, n, h, w).transpose(1, 0, 2, 3)
            else:
                dx = kernels.col2im(wm.T @ gm, (n, c, h, w), k, stride, padding)
            dx = dx[0] if squeeze else dx
        db = gm.sum(axis=1) if bias is not None else None
        return dx, dw, db

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, parents, backward)


def _check_even(h, w):
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even extents, got {h}x{w}")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first maximum."""
    xd, squeeze = _to4d(x.data)
    _check_even(*xd.shape[2:])
    out, idx = kernels.maxpool2_forward(np.ascontiguousarray(xd))

    def backward(g):
        g4 = np.ascontiguousarray(g[None] if squeeze else g)
        dx = kernels.maxpool2_backward(g4, idx)
        return (dx[0] if squeeze else dx,)

    return _result(out[0] if squeeze else out, (x,), backward)


def avgpool2(x: Tensor) -> Tensor:
    xd, squeeze = _to4d(x.data)
    n, c, h, w = xd.shape
    _check_even(h, w)
    out = (xd[:, :, 0::2, 0::2] + xd[:, :, 0::2, 1::2] + xd[:, :, 1::2, 0::2] + xd[:, :, 1::2, 1::2]) * 0.25

    def backward(g):
        g4 = g[None] if squeeze else g
        dx = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * 0.25
        return (dx[0] if squeeze else dx,)

    return _result(out[0] if squeeze else out, (x,), backward)


@lru_cache(maxsize=None)
def upsample_matrix(n: int) -> np.ndarray:
    """(2n, n) bilinear interpolation matrix, half-pixel centres, edge clamp."""
    a = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        lam = src - i0
        a[o, i0] += 1.0 - lam
        a[o, i1] += lam
    a.setflags(write=False)
    return a


def upsample2(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling (corner alignment off)."""
    ah = upsample_matrix(x.shape[-2])
    aw = upsample_matrix(x.shape[-1])
    out = ah @ x.data @ aw.T
    return _result(out, (x,), lambda g: (ah.T @ g @ aw,))


def concat(inputs) -> Tensor:
    """Stack tensors along the channel axis, in argument order."""
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise ShapeError("concat needs at least one tensor")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[:-3] != ref[:-3] or t.shape[-2:] != ref[-2:]:
            raise ShapeError(f"cannot concat shapes {ref} and {t.shape}")
    sizes = [t.shape[-3] for t in inputs]
    out = np.concatenate([t.data for t in inputs], axis=-3)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1], :, :] for i in range(len(inputs)))

    return _result(out, tuple(inputs), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward(g):
        dx = np.zeros(shape)
        dx[..., start:stop, :, :] = g
        return (dx,)

    return _result(x.data[..., start:stop, :, :].copy(), (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over H and W, keeping dims; gradient to the first row-major max."""
    xd = x.data
    lead, (h, w) = xd.shape[:-2], xd.shape[-2:]
    flat = xd.reshape(*lead, h * w)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., None]

    def backward(g):
        d = np.zeros_like(flat)
        np.put_along_axis(d, arg[..., None], g.reshape(*lead, 1), axis=-1)
        return (d.reshape(xd.shape),)

    return _result(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    h, w = x.shape[-2:]
    out = x.data.mean(axis=(-2, -1), keepdims=True)
    return _result(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape),))


def channel_max(x: Tensor) -> Tensor:
    """Max across channels, keeping a singleton channel axis."""
    xd = x.data
    arg = np.argmax(xd, axis=-3)[..., None, :, :]
    out = np.take_along_axis(xd, arg, axis=-3)

    def backward(g):
        d = np.zeros_like(xd)
        np.put_along_axis(d, arg, g, axis=-3)
        return (d,)

    return _result(out, (x,), backward)


def channel_mean(x: Tensor) -> Tensor:
    c = x.shape[-3]
    out = x.data.mean(axis=-3, keepdims=True)
    return _result(out, (x,), lambda g: (np.broadcast_to(g / c, x.shape),))


def mlp_shared(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """One-hidden-layer bias-free MLP on (…, C, 1, 1): ``w2 @ relu(w1 @ x)``."""
    c = x.shape[-3]
    hidden = w1.shape[0]
    if x.shape[-2:] != (1, 1):
        raise ShapeError(f"mlp_shared expects (..., C, 1, 1), got {x.shape}")
    if w1.shape != (hidden, c) or w2.shape != (c, hidden):
        raise ShapeError(f"weights {w1.shape}, {w2.shape} do not fit {c} channels")
    if hidden == 0 or c % hidden:
        raise ConfigError(f"{c} channels not divisible into {hidden} hidden units")
    lead = x.shape[:-3]
    xm = x.data.reshape(-1, c)
    pre = xm @ w1.data.T
    act = np.maximum(pre, 0.0)
    out = (act @ w2.data.T).reshape(*lead, c, 1, 1)

    def backward(g):
        gm = g.reshape(-1, c)
        dw2 = gm.T @ act
        dpre = (gm @ w2.data) * (pre > 0)
        dw1 = dpre.T @ xm
        dx = (dpre @ w1.data).reshape(x.shape)
        return dx, dw1, dw2

    return _result(out, (x, w1, w2), backward)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardization over H and W (no affine terms)."""
    xd = x.data
    mu = xd.mean(axis=(-2, -1), keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(-2, -1), keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=(-2, -1), keepdims=True)
        gy = (g * y).mean(axis=(-2, -1), keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y, (x,), backward)
