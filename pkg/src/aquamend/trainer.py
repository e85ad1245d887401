"""Dataset handling, the self-supervised training loop and inference.

Each training image is paired with its cached degradation tensors (the
twice-degraded image, the histogram-stretched image, the optional
attention map and the scene-component reference); they depend only on the
input image, so they are computed once at dataset load.  A training step
runs the autoencoder, degrades its output, evaluates the replacement loss
against the input and applies one Adam update on the batch-mean gradient.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, fields

import numpy as np

from .attention import attention_map
from .degradation import degrade_twice
from .image import clamp01, load_image, resize_bilinear, stretch_histogram, validate_image
from .loss import LossBreakdown, scene_reference, self_supervised_loss, total_loss
from .network import (
    NetworkParams,
    TrainingDiverged,
    add_gradients,
    adam_step,
    backward,
    build_network,
    forward,
    l1_penalty,
    load_checkpoint,
    save_checkpoint,
    spatial_divisor,
)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainingExample",
    "parse_config",
    "load_config",
    "split_dataset",
    "kfold_splits",
    "prepare_example",
    "load_dataset",
    "train_step",
    "validation_loss",
    "fit",
    "enhance",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class TrainConfig:
    """All training hyperparameters."""

    image_size: int = 256
    batch_size: int = 6
    epochs: int = 200
    lr: float = 0.0008
    c1: float = 0.65
    c2: float = 0.35
    attention_enabled: bool = False
    l1_kernel: float = 15e-6
    l1_bias: float = 1.5e-6
    leaky_alpha: float = 0.19
    split_fraction: float = 0.9
    seed: int = 0
    dataset_dir: str = ""
    checkpoint_dir: str = ""

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % 4:
            raise ValueError("image_size must be divisible by 4")


@dataclass(frozen=True)
class EpochRecord:
    """Per-epoch summary: mean training loss, validation loss, duration."""

    epoch: int
    train: LossBreakdown
    val_loss: float
    seconds: float


@dataclass(frozen=True)
class TrainingExample:
    """One image with its cached degradation tensors."""

    image: np.ndarray
    degraded: np.ndarray
    stretched: np.ndarray
    attention: np.ndarray | None
    scene_ref: np.ndarray
    path: str = ""


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config(text: str) -> TrainConfig:
    """Parse a flat "key = value" config (one per line, # comments)."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val)
    return TrainConfig(**values)


def _coerce(key: str, val: str):
    kind = TrainConfig.__dataclass_fields__[key].type
    if kind == "bool":
        if val.lower() not in _BOOL_WORDS:
            raise ValueError(f"config key {key}: expected a boolean, got {val!r}")
        return _BOOL_WORDS[val.lower()]
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    return val


def load_config(path: str | os.PathLike) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def split_dataset(paths: list, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffle and split into ceil(n*fraction) / remainder."""
    if len(paths) < 2:
        raise ValueError("need at least two images to split")
    order = np.random.default_rng(seed).permutation(len(paths))
    n_train = int(np.ceil(len(paths) * fraction))
    shuffled = [paths[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def kfold_splits(paths: list, k: int = 5, seed: int = 0) -> list:
    """Deterministic k-fold partition: fold i is the i-th validation chunk."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(paths) < k:
        raise ValueError(f"need at least {k} images for {k}-fold splits")
    order = np.random.default_rng(seed).permutation(len(paths))
    shuffled = [paths[i] for i in order]
    folds = [list(chunk) for chunk in np.array_split(np.arange(len(shuffled)), k)]
    out = []
    for i in range(k):
        val = [shuffled[j] for j in folds[i]]
        train = [shuffled[j] for f in range(k) if f != i for j in folds[f]]
        out.append((train, val))
    return out


def prepare_example(img: np.ndarray, attention_enabled: bool, path: str = "") -> TrainingExample:
    """Compute the cached degradation tensors for one image."""
    img = validate_image(img)
    return TrainingExample(
        image=img,
        degraded=degrade_twice(img),
        stretched=stretch_histogram(img),
        attention=attention_map(img).i_at if attention_enabled else None,
        scene_ref=scene_reference(img),
        path=path,
    )


def discover_images(directory: str | os.PathLike) -> list:
    """Image paths under a directory, lexicographically sorted."""
    names = [
        n for n in os.listdir(directory) if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS
    ]
    return [os.path.join(directory, n) for n in sorted(names)]


def load_dataset(paths: list, cfg: TrainConfig) -> list:
    """Load, resize and prepare every image in ``paths``."""
    examples = []
    for path in paths:
        img = resize_bilinear(load_image(path), cfg.image_size, cfg.image_size)
        examples.append(prepare_example(img, cfg.attention_enabled, path=str(path)))
    return examples


def train_step(params: NetworkParams, batch: list, cfg: TrainConfig):
    """One optimizer step over a batch of TrainingExamples.

    Returns (params, LossBreakdown); parameters are updated in place.
    """
    if not batch:
        raise ValueError("empty batch")
    batch = [
        ex if isinstance(ex, TrainingExample) else prepare_example(ex, cfg.attention_enabled)
        for ex in batch
    ]
    x = np.stack([ex.image for ex in batch])
    out, cache = forward(params, x)

    n = len(batch)
    out_grad = np.empty_like(out)
    l_sc_sum = 0.0
    l_im_sum = 0.0
    for i, ex in enumerate(batch):
        result = self_supervised_loss(
            ex.image,
            out[i],
            ex.degraded,
            ex.stretched,
            ex.attention,
            cfg.c1,
            cfg.c2,
            scene_ref=ex.scene_ref,
        )
        if not (np.isfinite(result.l_sc) and np.isfinite(result.l_im)):
            raise TrainingDiverged(f"non-finite loss on image {ex.path or i}")
        l_sc_sum += result.l_sc
        l_im_sum += result.l_im
        out_grad[i] = result.grad / n

    grads = backward(params, cache, out_grad)
    l1_value, l1_grads = l1_penalty(params, cfg.l1_kernel, cfg.l1_bias)
    grads = add_gradients(grads, l1_grads)
    params = adam_step(params, grads, cfg.lr)
    return params, total_loss(l_sc_sum / n, l_im_sum / n, l1_value, cfg.c1, cfg.c2)


def validation_loss(params: NetworkParams, examples: list, cfg: TrainConfig) -> float:
    """Mean self-supervised total loss (no update, no L1 term)."""
    if not examples:
        return float("nan")
    total = 0.0
    for ex in examples:
        out, _ = forward(params, ex.image)
        result = self_supervised_loss(
            ex.image, out, ex.degraded, ex.stretched, ex.attention, cfg.c1, cfg.c2,
            scene_ref=ex.scene_ref,
        )
        total += cfg.c1 * result.l_sc + cfg.c2 * result.l_im
    return total / len(examples)


def fit(cfg: TrainConfig, log_path: str | None = None, progress=None):
    """Full training run; returns (params, [EpochRecord...]).

    The CSV log columns are epoch, l_sc, l_im, l1, total.  A checkpoint is
    written to cfg.checkpoint_dir after the final epoch.
    """
    paths = discover_images(cfg.dataset_dir)
    train_paths, holdout_paths = split_dataset(paths, cfg.split_fraction, cfg.seed)
    train_set = load_dataset(train_paths, cfg)
    holdout_set = load_dataset(holdout_paths, cfg)
    params = build_network(cfg.seed, leaky_alpha=cfg.leaky_alpha)
    rng = np.random.default_rng(cfg.seed)

    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "l_sc", "l_im", "l1", "total"])

    records = []
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            order = rng.permutation(len(train_set))
            sums = np.zeros(3)
            batches = 0
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_set[i] for i in order[lo : lo + cfg.batch_size]]
                params, breakdown = train_step(params, batch, cfg)
                sums += (breakdown.l_sc, breakdown.l_im, breakdown.l1_penalty)
                batches += 1
            mean = total_loss(sums[0] / batches, sums[1] / batches, sums[2] / batches, cfg.c1, cfg.c2)
            val = validation_loss(params, holdout_set, cfg)
            seconds = time.perf_counter() - started
            records.append(EpochRecord(epoch=epoch, train=mean, val_loss=val, seconds=seconds))
            if writer is not None:
                writer.writerow(
                    [epoch] + [_fmt(v) for v in (mean.l_sc, mean.l_im, mean.l1_penalty, mean.total)]
                )
                log_file.flush()
            if progress is not None:
                progress(records[-1])
            log.info(
                "epoch %d: train %.6f val %.6f (%.1fs)", epoch, mean.total, val, seconds
            )
    finally:
        if log_file is not None:
            log_file.close()

    if cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        save_checkpoint(params, os.path.join(cfg.checkpoint_dir, "model.aqmd"))
    return params, records


def _fmt(v: float) -> str:
    return format(v, ".10g")


def enhance(params: NetworkParams, img: np.ndarray) -> np.ndarray:
    """Enhance one image: a single clamped forward pass.

    Spatial dims are snapped to the nearest multiple the architecture
    accepts before the pass; no degradation is applied at inference.
    """
    img = validate_image(img)
    div = spatial_divisor(params.specs)
    h, w = img.shape[:2]
    th = max(div, int(round(h / div)) * div)
    tw = max(div, int(round(w / div)) * div)
    if (th, tw) != (h, w):
        img = resize_bilinear(img, th, tw)
    out, _ = forward(params, img)
    return clamp01(out)
