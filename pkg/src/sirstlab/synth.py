"""Synthetic infrared small-target samples with exact masks.

A sample is built in four steps: draw a procedural (or imported) background,
choose targets from a per-scene size/type table, scale each target so its
signal-to-clutter ratio against a local background ring hits a requested
value, then soften each target's boundary with a small Gaussian blur.  The
mask is the pre-blur support of every placed target.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, GenerationError, InputError
from .imageops import blur, check_odd, resize_bilinear
from .pngio import read_gray, read_mask, write_gray8, write_mask
from .runtime import ordered_map

SIGMA_FLOOR = 1.0 / 255.0
SUPPORT_LEVEL = 0.05
SPIE_FRACTION = 0.0015
SCENES = ("cloud", "sky", "city", "sea", "field")
SHAPES = {"point_gaussian": ("gaussian",), "spot": ("ellipse",), "extended": ("plane", "ship", "uav")}

# (kind, shape, size_lo, size_hi, probability); sizes in pixels
_POINT = ("point_gaussian", "gaussian", 3, 7)
_SPOT = ("spot", "ellipse", 3, 9)
_PLANE = ("extended", "plane", 7, 15)
_UAV = ("extended", "uav", 7, 13)
_SHIP = ("extended", "ship", 9, 17)

DEFAULT_SIZE_TABLE = {
    "cloud": [(*_POINT, 0.45), (*_SPOT, 0.35), (*_PLANE, 0.12), (*_UAV, 0.08)],
    "sky":   [(*_POINT, 0.40), (*_SPOT, 0.30), (*_PLANE, 0.18), (*_UAV, 0.12)],
    "city":  [(*_POINT, 0.45), (*_SPOT, 0.35), (*_UAV, 0.20)],
    "sea":   [(*_POINT, 0.35), (*_SPOT, 0.30), (*_SHIP, 0.25), (*_PLANE, 0.10)],
    "field": [(*_POINT, 0.40), (*_SPOT, 0.35), (*_UAV, 0.15), (*_PLANE, 0.10)],
}
DEFAULT_COUNT_PROBS = {1: 0.63, 2: 0.22, 3: 0.10, 4: 0.05}


def _check_distribution(probs, what):
    probs = list(probs)
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise ConfigError(f"{what} probabilities must be non-negative and sum to 1")


@dataclass
class SynthConfig:
    scr_values: tuple = (3.0, 4.0, 5.0, 6.0)
    blur_sigmas: tuple = (0.2, 0.5, 1.0)
    size_table: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SIZE_TABLE.items()})
    count_probs: dict = field(default_factory=lambda: dict(DEFAULT_COUNT_PROBS))
    image_size: int = 256
    scenes: tuple = SCENES
    ring_width: int = 10
    max_retries: int = 200
    max_attempts: int = 8
    seed: int = 0

    def __post_init__(self):
        self.scr_values = tuple(float(c) for c in self.scr_values)
        self.blur_sigmas = tuple(float(s) for s in self.blur_sigmas)
        self.scenes = tuple(self.scenes)
        self.size_table = {k: [tuple(e) for e in v] for k, v in self.size_table.items()}
        self.count_probs = {int(k): float(v) for k, v in self.count_probs.items()}
        self.validate()

    def validate(self):
        if not self.scr_values or any(c <= 0 for c in self.scr_values):
            raise ConfigError("all SCR values must be positive")
        if not self.blur_sigmas or any(s <= 0 for s in self.blur_sigmas):
            raise ConfigError("all blur sigmas must be positive")
        _check_distribution(self.count_probs.values(), "target count")
        if any(k < 0 for k in self.count_probs):
            raise ConfigError("target counts must be non-negative")
        for scene, entries in self.size_table.items():
            _check_distribution([e[4] for e in entries], f"size table {scene!r}")
            for kind, shape, lo, hi, _ in entries:
                if shape not in SHAPES.get(kind, ()):
                    raise ConfigError(f"unknown target {kind}/{shape}")
                if not 1 <= lo <= hi:
                    raise ConfigError(f"bad size range {lo}..{hi}")
        for scene in self.scenes:
            if scene not in self.size_table:
                raise ConfigError(f"scene {scene!r} has no size table entry")
        if self.image_size < 8 or self.ring_width < 1:
            raise ConfigError("image_size must be >= 8 and ring_width >= 1")

    def to_dict(self):
        d = asdict(self)
        d["size_table"] = {k: [list(e) for e in v] for k, v in self.size_table.items()}
        d["count_probs"] = {str(k): v for k, v in self.count_probs.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ------------------------------------------------------------------ targets

@dataclass
class TargetTemplate:
    kind: str
    shape: str
    patch: np.ndarray       # intensities in [0, 1]
    support: np.ndarray     # bool footprint

    def __post_init__(self):
        if self.patch.shape != self.support.shape or not self.support.any():
            raise GenerationError(f"degenerate {self.shape} template")

    @property
    def area(self) -> int:
        return int(self.support.sum())


def make_point_target(size: int, sigma: float) -> TargetTemplate:
    """Gaussian blob with unit peak; support is where it exceeds 0.05."""
    check_odd(size, "point target size")
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    c = size // 2
    r = np.arange(size) - c
    if math.isinf(sigma):
        patch = np.ones((size, size))
    else:
        patch = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma * sigma))
    return TargetTemplate("point_gaussian", "gaussian", patch, patch > SUPPORT_LEVEL)


def _coords(size, angle):
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size] - c
    ca, sa = math.cos(angle), math.sin(angle)
    return y * ca - x * sa, y * sa + x * ca   # along, across


def make_spot_target(size: int, aspect: float, angle: float) -> TargetTemplate:
    """Elliptic blob with a dome profile."""
    u, v = _coords(size, angle)
    a = size / 2.0
    b = max(a * aspect, 0.75)
    rho = (u / a) ** 2 + (v / b) ** 2
    support = rho <= 1.0
    patch = np.where(support, 1.0 - 0.5 * rho, 0.0)
    return TargetTemplate("spot", "ellipse", patch, support)


def make_extended_target(shape: str, size: int, angle: float) -> TargetTemplate:
    """Procedural silhouettes: aircraft, small multirotor, ship."""
    u, v = _coords(size, angle)
    half = size / 2.0
    au, av = np.abs(u), np.abs(v)
    if shape == "plane":
        fuselage = (au <= half) & (av <= max(0.6, size / 14))
        wings = (np.abs(u + 0.1 * size) <= max(0.6, size / 12)) & (av <= half * 0.95)
        tail = (np.abs(u - 0.4 * size) <= 0.6) & (av <= half * 0.4)
        support = fuselage | wings | tail
    elif shape == "uav":
        arms = (np.abs(u - v) <= 0.9) | (np.abs(u + v) <= 0.9)
        support = arms & (au <= half * 0.8) & (av <= half * 0.8)
        support |= (au <= 1.0) & (av <= 1.0)
    elif shape == "ship":
        width = max(1.0, size / 7)
        hull = (au <= half) & (av <= width * np.clip((half - u) / (0.35 * size), 0, 1))
        support = hull | ((np.abs(u + 0.1 * size) <= size / 8) & (av <= width * 0.6))
    else:
        raise ConfigError(f"unknown extended shape {shape!r}")
    dist = np.sqrt(u ** 2 + v ** 2) / max(half, 1.0)
    patch = np.where(support, 1.0 - 0.4 * np.clip(dist, 0, 1), 0.0)
    return TargetTemplate("extended", shape, patch, support)


def draw_template(entry, rng: np.random.Generator) -> TargetTemplate:
    kind, shape, lo, hi, _ = entry
    if kind == "point_gaussian":
        sizes = [s for s in range(lo, hi + 1) if s % 2 == 1] or [lo | 1]
        size = int(rng.choice(sizes))
        return make_point_target(size, float(rng.uniform(0.35, 0.25 * size)))
    angle = float(rng.uniform(0, math.pi))
    size = int(rng.integers(lo, hi + 1))
    if kind == "spot":
        return make_spot_target(size, float(rng.uniform(0.5, 1.0)), angle)
    return make_extended_target(shape, size, angle)


@dataclass
class Placement:
    row: int    # top-left of the template box
    col: int
    height: int
    width: int

    def box(self, margin=0):
        return (self.row - margin, self.col - margin,
                self.row + self.height + margin, self.col + self.width + margin)


def _overlaps(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def draw_count(config: SynthConfig, rng: np.random.Generator) -> int:
    keys = sorted(config.count_probs)
    return int(keys[rng.choice(len(keys), p=[config.count_probs[k] for k in keys])])


def select_targets(scene_tag: str, config: SynthConfig, rng: np.random.Generator,
                   count: int | None = None) -> list:
    """Draw templates for ``scene_tag`` and place them without overlap.

    Each target box plus its background ring stays inside the image and
    clear of every other target box, so rings only ever see background.
    """
    if scene_tag not in config.size_table:
        raise ConfigError(f"unknown scene tag {scene_tag!r}")
    table = config.size_table[scene_tag]
    n = draw_count(config, rng) if count is None else count
    size, ring = config.image_size, config.ring_width
    chosen = []
    for _ in range(n):
        entry = table[rng.choice(len(table), p=[e[4] for e in table])]
        tpl = draw_template(entry, rng)
        h, w = tpl.patch.shape
        for _attempt in range(config.max_retries):
            lo_r, lo_c = ring, ring
            hi_r, hi_c = size - ring - h, size - ring - w
            if hi_r < lo_r or hi_c < lo_c:
                raise GenerationError(f"{h}x{w} target plus ring does not fit a {size}px image")
            p = Placement(int(rng.integers(lo_r, hi_r + 1)), int(rng.integers(lo_c, hi_c + 1)), h, w)
            if not any(_overlaps(p.box(ring), q.box()) or _overlaps(q.box(ring), p.box())
                       for _, q in chosen):
                chosen.append((tpl, p))
                break
        else:
            raise GenerationError(f"could not place target {len(chosen) + 1} of {n} "
                                  f"after {config.max_retries} tries")
    return chosen


# ---------------------------------------------------------------- intensity

@dataclass
class Adjusted:
    values: np.ndarray      # target values on the support (zeros elsewhere)
    mu_b: float
    sigma_b: float
    floored: bool


def background_stats(background: np.ndarray) -> tuple[float, float, bool]:
    bg = np.asarray(background, dtype=np.float64).ravel()
    if bg.size == 0:
        raise InputError("background region is empty")
    mu, sd = float(bg.mean()), float(bg.std())
    return (mu, SIGMA_FLOOR, True) if sd < SIGMA_FLOOR else (mu, sd, False)


def adjust_intensity(template: TargetTemplate, background, C: float) -> Adjusted:
    """Scale the template so the mean over its support is mu_B + C * sigma_B."""
    mu, sd, floored = background_stats(background)
    patch = template.patch * template.support
    k = C * sd / patch[template.support].mean()
    return Adjusted(np.where(template.support, mu + k * patch, 0.0), mu, sd, floored)


def scr_of(composite: np.ndarray, support_mask: np.ndarray, background_region: np.ndarray) -> float:
    """|mean(target) - mean(background)| / std(background)."""
    support_mask = np.asarray(support_mask, dtype=bool)
    background_region = np.asarray(background_region, dtype=bool)
    if not support_mask.any() or not background_region.any():
        raise InputError("target and background regions must be nonempty")
    if (support_mask & background_region).any():
        raise InputError("target and background regions overlap")
    bg = composite[background_region]
    sd = bg.std()
    if sd == 0:
        raise InputError("background region is flat")
    return float(abs(composite[support_mask].mean() - bg.mean()) / sd)


def ring_mask(shape, placement: Placement, width: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    r0, c0, r1, c1 = placement.box(width)
    m[max(r0, 0):r1, max(c0, 0):c1] = True
    r0, c0, r1, c1 = placement.box()
    m[r0:r1, c0:c1] = False
    return m


# -------------------------------------------------------------- backgrounds

def _fbm(rng, size, base_cells, octaves):
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o + 1
        out += amp * resize_bilinear(rng.standard_normal((cells, cells)), (size, size))
        total += amp
        amp *= 0.5
    out /= total
    return (out - out.mean()) / (out.std() + 1e-12)


def procedural_background(scene: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic texture in [0, 1] mimicking a coarse infrared scene."""
    mu = rng.uniform(0.2, 0.45)
    if scene == "cloud":
        img = mu + rng.uniform(0.04, 0.08) * _fbm(rng, size, 3, 4)
    elif scene == "sky":
        ramp = np.linspace(-0.5, 0.5, size)[:, None] * rng.uniform(0.02, 0.1)
        img = mu + ramp + 0.01 * _fbm(rng, size, 2, 3)
    elif scene == "city":
        tile = int(rng.integers(12, 33))
        n = size // tile + 1
        blocks = rng.uniform(-0.05, 0.05, (n, n))
        img = mu + np.kron(blocks, np.ones((tile, tile)))[:size, :size] + 0.015 * _fbm(rng, size, 8, 2)
    elif scene == "sea":
        rows = np.convolve(rng.standard_normal(size + 8), np.ones(9) / 9, mode="valid")[:size]
        waves = np.sin(np.arange(size) * rng.uniform(0.3, 0.8) + rng.uniform(0, 6.3))
        img = mu + 0.03 * rows[:, None] + 0.01 * waves[None, :] + 0.01 * _fbm(rng, size, 6, 2)
    elif scene == "field":
        img = mu + rng.uniform(0.02, 0.04) * _fbm(rng, size, 10, 3)
    else:
        raise ConfigError(f"unknown scene {scene!r}")
    img = img + 0.004 * rng.standard_normal((size, size))
    return np.clip(img, 0.0, 1.0)


@dataclass
class Background:
    """A background source: a procedural scene name or an imported image."""

    scene: str
    image: np.ndarray | None = None

    def render(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.image is None:
            return procedural_background(self.scene, size, rng)
        h, w = self.image.shape
        side = min(h, w)
        r, c = int(rng.integers(0, h - side + 1)), int(rng.integers(0, w - side + 1))
        crop = self.image[r:r + side, c:c + side]
        return crop if side == size else np.clip(resize_bilinear(crop, (size, size)), 0, 1)


def import_background(path, scene: str) -> Background:
    return Background(scene, read_gray(path))


# ------------------------------------------------------------------ samples

@dataclass
class SampleRecord:
    image: np.ndarray         # final (blurred) image in [0, 1]
    mask: np.ndarray          # bool, pre-blur supports
    meta: dict
    composite: np.ndarray     # pre-blur composite, where SCR is defined
    supports: list = field(default_factory=list)  # per-target full-size bool masks
    rings: list = field(default_factory=list)


def _compose(background, targets, config, rng):
    size = config.image_size
    img = background.copy()
    mask = np.zeros((size, size), dtype=bool)
    metas, supports, rings = [], [], []
    for tpl, p in targets:
        C = float(rng.choice(config.scr_values))
        sigma = float(rng.choice(config.blur_sigmas))
        ring = ring_mask(img.shape, p, config.ring_width)
        adj = adjust_intensity(tpl, img[ring], C)
        r0, c0, r1, c1 = p.box()
        region = img[r0:r1, c0:c1]
        region[tpl.support] = np.clip(adj.values[tpl.support], 0.0, 1.0)
        clipped = bool(np.any(adj.values[tpl.support] > 1.0) or np.any(adj.values[tpl.support] < 0.0))
        sup = np.zeros_like(mask)
        sup[r0:r1, c0:c1] = tpl.support
        mask |= sup
        ys, xs = np.nonzero(sup)
        metas.append({
            "kind": tpl.kind, "shape": tpl.shape, "C": C, "blur_sigma": sigma,
            "centroid": [float(ys.mean()), float(xs.mean())],
            "bbox": [int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1],
            "area": int(sup.sum()), "mu_b": adj.mu_b, "sigma_b": adj.sigma_b,
            "sigma_floored": adj.floored, "clipped": clipped,
        })
        supports.append(sup)
        rings.append(ring)
    composite = img.copy()
    out = img
    for m in metas:
        # the 5x5 kernel reaches two pixels past the support
        r0, c0, r1, c1 = m["bbox"]
        r0, c0, r1, c1 = max(r0 - 2, 0), max(c0 - 2, 0), r1 + 2, c1 + 2
        out[r0:r1, c0:c1] = blur(composite, m["blur_sigma"])[r0:r1, c0:c1]
    for m, sup, ring in zip(metas, supports, rings):
        m["scr_measured"] = scr_of(composite, sup, ring)
    return composite, out, mask, metas, supports, rings


def generate_sample(index: int, config: SynthConfig, backgrounds: Sequence[Background] | None = None) -> SampleRecord:
    """One sample, a pure function of (config.seed, index, backgrounds).

    Samples whose clipping pushes any target SCR outside 5% are redrawn from
    a fresh substream; after ``max_attempts`` the last draw is kept with its
    clipped targets flagged.
    """
    backgrounds = list(backgrounds) if backgrounds else [Background(s) for s in config.scenes]
    for attempt in range(config.max_attempts):
        rng = np.random.default_rng([config.seed, index, attempt])
        bg = backgrounds[int(rng.integers(len(backgrounds)))]
        background = bg.render(config.image_size, rng)
        targets = select_targets(bg.scene, config, rng)
        composite, image, mask, metas, sups, rings = _compose(background, targets, config, rng)
        bad = [m for m in metas if m["clipped"] and abs(m["scr_measured"] - m["C"]) > 0.05 * m["C"]]
        if not bad:
            break
    meta = {"index": index, "scene": bg.scene, "attempt": attempt, "targets": metas,
            "image_size": config.image_size}
    return SampleRecord(image, mask, meta, composite, sups, rings)


# ------------------------------------------------------------------ dataset

def sample_name(index: int) -> str:
    return f"{index:05d}"


def _histogram(values, edges):
    counts, _ = np.histogram(values, bins=edges)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def dataset_stats(metas: list, config: SynthConfig) -> dict:
    targets = [t for m in metas for t in m["targets"]]
    areas = [t["area"] for t in targets]
    bound = SPIE_FRACTION * config.image_size ** 2
    counts = Counter(len(m["targets"]) for m in metas)
    return {
        "images": len(metas),
        "targets": len(targets),
        "targets_per_image": {str(k): counts[k] for k in sorted(counts)},
        "multi_target_fraction": (sum(v for k, v in counts.items() if k >= 2) / len(metas)) if metas else 0.0,
        "spie_bound_px": bound,
        "spie_fraction": (sum(a < bound for a in areas) / len(areas)) if areas else 1.0,
        "area_hist": _histogram(areas, [0, 5, 10, 20, 40, 60, 80, 100, 150, 250, 10 ** 6]),
        "scr_hist": {str(c): sum(t["C"] == c for t in targets) for c in config.scr_values},
        "scr_within_5pct": (sum(abs(t["scr_measured"] - t["C"]) <= 0.05 * t["C"] for t in targets
                                if not t["clipped"]) / max(1, sum(not t["clipped"] for t in targets))),
        "clipped_targets": sum(t["clipped"] for t in targets),
        "kinds": dict(sorted(Counter(t["kind"] for t in targets).items())),
        "shapes": dict(sorted(Counter(t["shape"] for t in targets).items())),
        "scenes": dict(sorted(Counter(m["scene"] for m in metas).items())),
        "redrawn_samples": sum(m["attempt"] > 0 for m in metas),
    }


def _dump(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def synth_dataset(n: int, root, config: SynthConfig, backgrounds: Sequence[Background] | None = None,
                  n_test: int = 0, extra_manifest: dict | None = None) -> dict:
    """Write ``n`` samples under ``root``; the last ``n_test`` form the test split."""
    if n < 0 or not 0 <= n_test <= n:
        raise ConfigError("need 0 <= n_test <= n")
    if backgrounds is not None and not list(backgrounds):
        raise ConfigError("background list is empty")
    root = Path(root)
    for sub in ("images", "masks", "meta"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    def work(i):
        rec = generate_sample(i, config, backgrounds)
        name = sample_name(i)
        try:
            write_gray8(root / "images" / f"{name}.png", rec.image)
            write_mask(root / "masks" / f"{name}.png", rec.mask)
            _dump(root / "meta" / f"{name}.json", rec.meta)
        except OSError as exc:
            raise OSError(f"writing sample {name} under {root}: {exc}") from exc
        return rec.meta

    metas = ordered_map(work, range(n))
    names = [sample_name(i) for i in range(n)]
    stats = dataset_stats(metas, config)
    manifest = {
        "kind": "sirst-synthetic",
        "n": n,
        "seed": config.seed,
        "config": config.to_dict(),
        "backgrounds": [b.scene if b.image is None else f"imported:{b.scene}" for b in backgrounds]
        if backgrounds else list(config.scenes),
        "splits": {"train": names[:n - n_test], "test": names[n - n_test:]},
        **(extra_manifest or {}),
    }
    _dump(root / "manifest.json", manifest)
    _dump(root / "stats.json", stats)
    return manifest


def load_split(root, split: str = "train"):
    """Images in [0, 1], bool masks and names for one split of a dataset."""
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except OSError as exc:
        raise OSError(f"cannot read dataset manifest under {root}: {exc}") from exc
    if split == "all":
        names = manifest["splits"]["train"] + manifest["splits"]["test"]
    elif split in manifest["splits"]:
        names = manifest["splits"][split]
    else:
        raise ConfigError(f"dataset has no split {split!r}")
    images = [read_gray(root / "images" / f"{n}.png") for n in names]
    masks = [read_mask(root / "masks" / f"{n}.png") for n in names]
    return images, masks, names


def toy_config(seed: int = 0, **overrides) -> SynthConfig:
    """Small 64px point/spot task used for quick end-to-end runs."""
    table = [("point_gaussian", "gaussian", 3, 7, 0.5), ("spot", "ellipse", 3, 7, 0.5)]
    base = dict(scr_values=(3.0, 5.0), blur_sigmas=(0.2, 0.5, 1.0), image_size=64,
                size_table={s: list(table) for s in SCENES}, ring_width=5,
                count_probs={1: 0.63, 2: 0.27, 3: 0.10}, seed=seed)
    base.update(overrides)
    return SynthConfig(**base)
