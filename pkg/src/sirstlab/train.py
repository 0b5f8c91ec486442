"""Deterministic training loop: Adagrad with cosine decay and light augmentation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import net as N
from . import tensor as T
from .errors import ConfigError, NumericError, ShapeError, StaleGradientError
from .imageops import blur, normalize, resize_bilinear, resize_nearest

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-10


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 16
    epochs: int = 1
    max_steps: int | None = None
    flip: bool = True
    blur: bool = True
    crop: bool = True
    crop_fraction: float = 0.9
    crop_prob: float = 0.5
    blur_sigma_max: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if not 0 < self.crop_fraction <= 1:
            raise ConfigError("crop_fraction must lie in (0, 1]")
        if not 0 <= self.crop_prob <= 1:
            raise ConfigError("crop_prob must lie in [0, 1]")

    def steps_per_epoch(self, n: int) -> int:
        return math.ceil(n / self.batch_size)

    def total_steps(self, n: int) -> int:
        total = self.epochs * self.steps_per_epoch(n)
        return min(total, self.max_steps) if self.max_steps else total


# -------------------------------------------------------------- augmentation

def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
            config: TrainConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Random flips, blur and crop-resize, then per-image normalization.

    Every random draw happens regardless of which flags are on, so the
    stream position never depends on the configuration.
    """
    config = config or TrainConfig()
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise ShapeError(f"image {image.shape} and mask {mask.shape} differ")
    flip_h, flip_v = rng.random(2) < 0.5
    sigma = rng.uniform(0.0, config.blur_sigma_max)
    do_crop = rng.random() < config.crop_prob
    h, w = image.shape
    ch, cw = max(1, round(h * config.crop_fraction)), max(1, round(w * config.crop_fraction))
    oy, ox = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))

    if config.flip:
        if flip_h:
            image, mask = image[:, ::-1], mask[:, ::-1]
        if flip_v:
            image, mask = image[::-1], mask[::-1]
    if config.blur:
        image = blur(image, sigma)
    if config.crop and do_crop and (ch, cw) != (h, w):
        image = resize_bilinear(image[oy:oy + ch, ox:ox + cw], (h, w))
        mask = resize_nearest(mask[oy:oy + ch, ox:ox + cw], (h, w))
    return normalize(image), np.ascontiguousarray(mask)


# ----------------------------------------------------------------- optimizer

def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def adagrad_step(params, lr: float, eps: float = ADAGRAD_EPS):
    """In-place Adagrad update; consumes the gradients it applies."""
    params = list(params)
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise StaleGradientError(f"no gradient for {len(missing)} parameter(s), e.g. {missing[0]}")
    for p in params:
        g = p.grad
        p.accumulator += g * g
        p.data[...] -= lr * g / (np.sqrt(p.accumulator) + eps)
        p.tensor.grad = None
    return params


# -------------------------------------------------------------------- loop

@dataclass
class Dataset:
    """In-memory image/mask pairs; images in [0, 1], masks in {0, 1}."""

    images: np.ndarray
    masks: np.ndarray
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.images.ndim != 3 or self.images.shape != self.masks.shape:
            raise ShapeError("images and masks must share an (N, H, W) shape")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.images))]

    def __len__(self):
        return len(self.images)


@dataclass
class TrainResult:
    params: N.NetworkParams
    loss_trace: list          # (step, lr, loss)
    checkpoints: list
    step: int


def batch_indices(n: int, config: TrainConfig, step: int) -> np.ndarray:
    spe = config.steps_per_epoch(n)
    epoch, b = divmod(step, spe)
    perm = np.random.default_rng([config.seed, 1, epoch]).permutation(n)
    return perm[b * config.batch_size:(b + 1) * config.batch_size]


def write_loss_csv(path, trace: Sequence, append: bool = False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step", "lr", "loss"])
        for step, lr, loss in trace:
            w.writerow([step, repr(lr), repr(loss)])


def train(dataset: Dataset, spec: N.NetworkSpec, config: TrainConfig,
          out_dir=None, resume: N.Checkpoint | None = None,
          callback: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Run (or continue) a training job; deterministic given seed and data."""
    n = len(dataset)
    if n == 0:
        raise ConfigError("dataset is empty")
    div = 1 << spec.depth
    if dataset.images.shape[1] % div or dataset.images.shape[2] % div:
        raise ShapeError(f"extents {dataset.images.shape[1:]} not divisible by {div}")
    if resume is not None:
        if resume.spec != spec:
            raise ConfigError("checkpoint spec does not match the requested network")
        params, start = resume.params, resume.step
    else:
        params, start = N.build(spec), 0
    total = config.total_steps(n)
    out_dir = Path(out_dir) if out_dir is not None else None
    trace, ckpts = [], []

    def save(step):
        path = out_dir / f"ckpt_{step:06d}.ckpt"
        N.save_checkpoint(path, spec, params, step=step, seed=config.seed,
                          extra={"train_config": asdict(config), "total_steps": total})
        ckpts.append(path)

    for step in range(start, total):
        ids = batch_indices(n, config, step)
        rng = np.random.default_rng([config.seed, 2, step])
        xs, ys = zip(*(augment(dataset.images[k], dataset.masks[k], rng, config) for k in ids))
        x = np.stack(xs)[:, None]
        y = np.stack(ys)[:, None]
        lr = cosine_lr(config.learning_rate, step, total)
        params.zero_grad()
        with T.Tape() as tape:
            loss = N.soft_iou_loss(N.forward(x, params, spec), y)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}, "
                               f"batch {[dataset.ids[k] for k in ids]}")
        tape.backward(loss)
        adagrad_step(params, lr)
        trace.append((step, lr, value))
        if callback:
            callback(step, lr, value)
        log.debug("step %d lr %.5f loss %.5f", step, lr, value)
        done = step + 1
        if out_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0 and done < total:
            save(done)
    if out_dir is not None:
        if total > start or not ckpts:
            save(max(total, start))
        write_loss_csv(out_dir / "loss.csv", trace, append=resume is not None)
    return TrainResult(params, trace, ckpts, max(total, start))
