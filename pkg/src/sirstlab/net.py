"""Dense nested attention network.

The network is a grid of nodes ``(i, j)``: ``i`` is the down-sampling level
(0 = full resolution) and ``j`` the position along the skip pathway.  Column
``j = 0`` is the encoder.  Every fusion node (``j > 0``) concatenates

* the ``j`` same-level predecessors ``(i, 0) .. (i, j-1)``,
* the shallower node ``(i-1, j)`` max-pooled down to level ``i`` (absent at ``i = 0``),
* the deeper node ``(i+1, j-1)`` upsampled to level ``i``,

runs the result through a conv block and refines it with cascaded channel
and spatial attention.  The terminal node of each level, ``(i, depth-i)``,
feeds the pyramid fusion head that produces the probability map.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DependencyError, ShapeError
from .tensor import Parameter, Tensor

VARIANTS = ("full", "no_dnim", "left_to_right", "top_to_bottom")
ATTENTION_MODES = ("full", "no_channel", "no_spatial", "none", "sum_fusion")
NORMS = ("instance", "none")
SOFT_IOU_EPS = 1e-6
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class NetworkSpec:
    depth: int = 4
    channels: tuple = (16, 32, 64, 128, 256)
    mlp_reduction: int = 4
    variant: str = "full"
    attention: str = "full"
    fpfm_layers: tuple | None = None
    residual: bool = False
    norm: str = "instance"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        layers = tuple(range(self.depth + 1)) if self.fpfm_layers is None else self.fpfm_layers
        object.__setattr__(self, "fpfm_layers", tuple(sorted({int(v) for v in layers})))
        self.validate()

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if len(self.channels) != self.depth + 1:
            raise ConfigError(f"need {self.depth + 1} channel widths, got {len(self.channels)}")
        if self.mlp_reduction < 1:
            raise ConfigError("mlp_reduction must be >= 1")
        for c in self.channels:
            if c < 1 or c % self.mlp_reduction:
                raise ConfigError(f"channel width {c} not divisible by reduction {self.mlp_reduction}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"unknown attention mode {self.attention!r}; choose from {ATTENTION_MODES}")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}; choose from {NORMS}")
        if not self.fpfm_layers:
            raise ConfigError("fpfm_layers must not be empty")
        if not set(self.fpfm_layers) <= set(range(self.depth + 1)):
            raise ConfigError(f"fpfm_layers {self.fpfm_layers} outside 0..{self.depth}")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["fpfm_layers"] = list(self.fpfm_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        if d.get("fpfm_layers") is not None:
            d["fpfm_layers"] = tuple(d["fpfm_layers"])
        return cls(**d)


def fpfm_preset(name: str, depth: int) -> tuple:
    """Pyramid-fusion layer subsets used in the fusion ablations.

    Layers are numbered from 1 in the ablation names, so ``no_L5`` drops level
    4 of a depth-4 network and ``no_fpfm`` keeps only the shallowest output.
    """
    levels = list(range(depth + 1))
    presets = {"full": levels, "no_fpfm": [0]}
    for k in range(1, depth + 1):
        dropped = levels[depth + 1 - k:]
        presets["no_L" + "".join(str(v + 1) for v in dropped)] = levels[:depth + 1 - k]
    if name not in presets:
        raise ConfigError(f"unknown fusion preset {name!r}; choose from {sorted(presets)}")
    return tuple(presets[name])


# ----------------------------------------------------------------- wiring

@lru_cache(maxsize=64)
def grid_nodes(spec: NetworkSpec) -> tuple:
    """Node coordinates in evaluation order (column by column, shallow first)."""
    d = spec.depth
    if spec.variant == "no_dnim":
        return tuple([(i, 0) for i in range(d + 1)] + [(i, d - i) for i in range(d - 1, -1, -1)])
    return tuple((i, j) for j in range(d + 1) for i in range(d + 1 - j))


def terminal_node(spec: NetworkSpec, level: int) -> tuple:
    return (level, spec.depth - level)


@lru_cache(maxsize=64)
def wiring(spec: NetworkSpec) -> dict:
    """Map each node to its ordered inputs as ``(kind, source)`` pairs.

    ``kind`` is ``image`` or ``encoder`` for column 0; fusion inputs are
    ``dense``, ``pool`` (shallower node, max-pooled) and ``up`` (deeper node,
    upsampled), listed in concatenation order.
    """
    d = spec.depth
    out = {}
    for i, j in grid_nodes(spec):
        if j == 0:
            out[(i, j)] = (("image", None),) if i == 0 else (("encoder", (i - 1, 0)),)
            continue
        if spec.variant == "no_dnim":
            out[(i, j)] = (("dense", (i, 0)), ("up", (i + 1, j - 1)))
            continue
        edges = [("dense", (i, k)) for k in range(j)]
        with_pool = i > 0 and (
            spec.variant == "full" or (spec.variant == "top_to_bottom" and i + j < d)
        )
        if with_pool:
            edges.append(("pool", (i - 1, j)))
        edges.append(("up", (i + 1, j - 1)))
        out[(i, j)] = tuple(edges)
    return out


def node_in_channels(spec: NetworkSpec) -> dict:
    ch = spec.channels
    res = {}
    for node, edges in wiring(spec).items():
        if edges[0][0] == "image":
            res[node] = 1
        elif edges[0][0] == "encoder":
            res[node] = ch[node[0] - 1]
        else:
            res[node] = sum(ch[src[0]] for _, src in edges)
    return res


# ----------------------------------------------------------------- parameters

class NetworkParams:
    """Ordered, uniquely named collection of :class:`Parameter`."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self._params = OrderedDict()

    def add(self, name, array):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._params[name] = Parameter(name, Tensor(array))
        return self._params[name]

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def t(self, name) -> Tensor:
        return self._params[name].tensor

    def count(self) -> int:
        return int(sum(p.data.size for p in self))

    def zero_grad(self):
        for p in self:
            p.tensor.grad = None


def _xavier(rng, shape):
    if len(shape) == 4:
        o, c, k, _ = shape
        fan_in, fan_out = c * k * k, o * k * k
    else:
        fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def parameter_shapes(spec: NetworkSpec) -> list:
    """``(name, shape)`` for every learnable tensor, in initialization order."""
    ch = spec.channels
    cin = node_in_channels(spec)
    wires = wiring(spec)
    shapes = []

    def block(prefix, a, b):
        shapes.extend([
            (f"{prefix}.conv1.weight", (b, a, 3, 3)), (f"{prefix}.conv1.bias", (b,)),
            (f"{prefix}.conv2.weight", (b, b, 3, 3)), (f"{prefix}.conv2.bias", (b,)),
        ])

    for node in grid_nodes(spec):
        i, j = node
        prefix = f"L{i}_{j}"
        c = ch[i]
        if j > 0 and spec.attention == "sum_fusion":
            for t, (_, src) in enumerate(wires[node]):
                shapes += [(f"{prefix}.proj{t}.weight", (c, ch[src[0]], 1, 1)),
                           (f"{prefix}.proj{t}.bias", (c,))]
            block(prefix + ".block", c, c)
        else:
            block(prefix + ".block", cin[node], c)
        if j > 0 and spec.attention in ("full", "no_spatial"):
            hidden = c // spec.mlp_reduction
            shapes += [(f"{prefix}.ca.fc1", (hidden, c)), (f"{prefix}.ca.fc2", (c, hidden))]
        if j > 0 and spec.attention in ("full", "no_channel"):
            shapes.append((f"{prefix}.sa.conv", (1, 2, 7, 7)))
    fused = sum(ch[i] for i in spec.fpfm_layers)
    shapes += [("fpfm.weight", (1, fused, 1, 1)), ("fpfm.bias", (1,))]
    return shapes


def build(spec: NetworkSpec) -> NetworkParams:
    """Allocate parameters: Xavier-uniform weights, zero biases, seeded."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params = NetworkParams(spec)
    for name, shape in parameter_shapes(spec):
        if name.endswith(".bias"):
            params.add(name, np.zeros(shape))
        else:
            params.add(name, _xavier(rng, shape))
    return params


# ----------------------------------------------------------------- blocks

def conv_block(x: Tensor, params: NetworkParams, prefix: str, residual: bool = False,
               norm: str = "instance") -> Tensor:
    """Two 3x3 conv (+ instance norm) + ReLU layers; optional identity shortcut.

    The parameter-free instance norm keeps activations on a fixed scale; without
    it the first Adagrad steps (each roughly lr * sign(g)) push every unit of a
    wide layer the same way and kill the ReLUs.
    """
    nrm = T.instance_norm if norm == "instance" else (lambda t: t)
    h = T.relu(nrm(T.conv2d(x, params.t(prefix + ".conv1.weight"), params.t(prefix + ".conv1.bias"), 1, 1)))
    h = nrm(T.conv2d(h, params.t(prefix + ".conv2.weight"), params.t(prefix + ".conv2.bias"), 1, 1))
    if residual and x.shape[-3] == h.shape[-3]:
        h = h + x
    return T.relu(h)


def channel_attention_map(L: Tensor, fc1: Tensor, fc2: Tensor) -> Tensor:
    """sigmoid(MLP(global max) + MLP(global avg)), shape (..., C, 1, 1)."""
    return T.sigmoid(T.mlp_shared(T.global_max_pool(L), fc1, fc2)
                     + T.mlp_shared(T.global_avg_pool(L), fc1, fc2))


def csam_channel(L: Tensor, fc1: Tensor, fc2: Tensor, override: float | None = None) -> Tensor:
    if override is not None:
        return L * override
    return L * channel_attention_map(L, fc1, fc2)


def spatial_attention_map(L: Tensor, weight: Tensor) -> Tensor:
    """sigmoid(7x7 conv over [channel max, channel mean]), shape (..., 1, H, W)."""
    pooled = T.concat([T.channel_max(L), T.channel_mean(L)])
    return T.sigmoid(T.conv2d(pooled, weight, None, 1, 3))


def csam_spatial(L: Tensor, weight: Tensor, override: float | None = None) -> Tensor:
    if override is not None:
        return L * override
    return L * spatial_attention_map(L, weight)


# ----------------------------------------------------------------- grid

class NodeGrid:
    """Computed node outputs keyed by ``(i, j)``."""

    def __init__(self, image: Tensor):
        self.image = image
        self.nodes = {}

    def __getitem__(self, key):
        try:
            return self.nodes[key]
        except KeyError:
            raise DependencyError(f"node {key} has not been computed yet") from None

    def __contains__(self, key):
        return key in self.nodes

    def __len__(self):
        return len(self.nodes)


def dnim_node(i: int, j: int, grid: NodeGrid, params: NetworkParams,
              spec: NetworkSpec | None = None, attention_override: float | None = None) -> Tensor:
    """Compute node ``(i, j)`` from already-computed predecessors."""
    spec = spec or params.spec
    edges = wiring(spec).get((i, j))
    if edges is None:
        raise ConfigError(f"node {(i, j)} is not part of the {spec.variant} grid")
    prefix = f"L{i}_{j}"
    kind = edges[0][0]
    if kind == "image":
        out = conv_block(grid.image, params, prefix + ".block", spec.residual, spec.norm)
    elif kind == "encoder":
        out = T.maxpool2(conv_block(grid[edges[0][1]], params, prefix + ".block", spec.residual, spec.norm))
    else:
        terms = []
        for k, (kind, src) in enumerate(edges):
            x = grid[src]
            if kind == "pool":
                x = T.maxpool2(x)
            elif kind == "up":
                x = T.upsample2(x)
            if spec.attention == "sum_fusion":
                x = T.conv2d(x, params.t(f"{prefix}.proj{k}.weight"), params.t(f"{prefix}.proj{k}.bias"))
            terms.append(x)
        if spec.attention == "sum_fusion":
            fused = terms[0]
            for x in terms[1:]:
                fused = fused + x
        else:
            fused = T.concat(terms)
        out = conv_block(fused, params, prefix + ".block", spec.residual, spec.norm)
        if spec.attention in ("full", "no_spatial"):
            out = csam_channel(out, params.t(prefix + ".ca.fc1"), params.t(prefix + ".ca.fc2"),
                               attention_override)
        if spec.attention in ("full", "no_channel"):
            out = csam_spatial(out, params.t(prefix + ".sa.conv"), attention_override)
    h0, w0 = grid.image.shape[-2:]
    want = (spec.channels[i], h0 >> i, w0 >> i)
    if out.shape[-3:] != want:
        raise ShapeError(f"node {(i, j)} has shape {out.shape[-3:]}, expected {want}")
    grid.nodes[(i, j)] = out
    return out


def fpfm(grid: NodeGrid, params: NetworkParams, spec: NetworkSpec | None = None) -> Tensor:
    """Upsample terminal nodes to full size, concatenate by depth, 1x1 conv, sigmoid."""
    spec = spec or params.spec
    if not spec.fpfm_layers:
        raise ConfigError("fpfm_layers must not be empty")
    feats = []
    for level in spec.fpfm_layers:
        x = grid[terminal_node(spec, level)]
        for _ in range(level):
            x = T.upsample2(x)
        feats.append(x)
    g = T.concat(feats) if len(feats) > 1 else feats[0]
    return T.sigmoid(T.conv2d(g, params.t("fpfm.weight"), params.t("fpfm.bias")))


def forward(image, params: NetworkParams, spec: NetworkSpec | None = None,
            attention_override: float | None = None, return_grid: bool = False):
    """Probability map for a (1, H, W) image or an (N, 1, H, W) batch."""
    spec = spec or params.spec
    image = T.as_tensor(image)
    h, w = image.shape[-2:]
    if image.ndim not in (3, 4) or image.shape[-3] != 1:
        raise ShapeError(f"expected a single-channel image, got shape {image.shape}")
    if h % (1 << spec.depth) or w % (1 << spec.depth):
        raise ShapeError(f"extents {h}x{w} not divisible by 2**{spec.depth}")
    grid = NodeGrid(image)
    for i, j in grid_nodes(spec):
        dnim_node(i, j, grid, params, spec, attention_override)
    out = fpfm(grid, params, spec)
    return (out, grid) if return_grid else out


class DNANet:
    """Convenience wrapper bundling a spec with its parameters."""

    def __init__(self, spec: NetworkSpec, params: NetworkParams | None = None):
        self.spec = spec
        self.params = params if params is not None else build(spec)

    def __call__(self, image, **kw):
        return forward(image, self.params, self.spec, **kw)

    def predict(self, image: np.ndarray) -> np.ndarray:
        """Probability map as a plain (H, W) array for one normalized image."""
        x = np.asarray(image, dtype=np.float64)[None]
        return forward(Tensor(x), self.params, self.spec).data[0]


def soft_iou_loss(pred: Tensor, mask, eps: float = SOFT_IOU_EPS) -> Tensor:
    """1 - (sum(p*y) + eps) / (sum(p) + sum(y) - sum(p*y) + eps)."""
    mask = T.as_tensor(mask)
    if pred.shape != mask.shape:
        raise ShapeError(f"prediction {pred.shape} and mask {mask.shape} differ")
    inter = T.tsum(pred * mask)
    union = T.tsum(pred) + float(mask.data.sum()) - inter
    return 1.0 - (inter + eps) / (union + eps)


# ----------------------------------------------------------------- checkpoints

MAGIC = b"SIRSTCKP"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: NetworkParams
    step: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, spec: NetworkSpec, params: NetworkParams, step: int = 0,
                    seed: int | None = None, extra: dict | None = None) -> Path:
    """Write the versioned binary container described in the README."""
    entries, blobs = [], []
    for p in params:
        for kind, arr in (("param", p.data), ("accum", p.accumulator)):
            entries.append({"name": p.name, "kind": kind, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps({
        "spec": spec.to_dict(), "step": int(step),
        "seed": int(spec.seed if seed is None else seed),
        "tensors": entries, "extra": extra or {},
    }, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    off = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    spec = NetworkSpec.from_dict(header["spec"])
    params = NetworkParams(spec)
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(e["shape"])
        off += 8 * n
        if e["kind"] == "param":
            params.add(e["name"], arr)
        else:
            params[e["name"]].accumulator = arr.copy()
    expected = [name for name, _ in parameter_shapes(spec)]
    if params.names() != expected:
        raise ConfigError(f"{path}: parameter set does not match its network spec")
    return Checkpoint(spec, params, header["step"], header["seed"], header.get("extra", {}))
