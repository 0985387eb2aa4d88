"""Epoch-driven training shared by the synthetic and real stages.

Each stage trains the same two-headed model; only the label sources differ.
The synthetic stage supervises both heads with exact ground-truth edges,
the real stage supervises the pixel head with `pixel_labels` and the object
head with `object_labels`. Every epoch ends with an atomic checkpoint and a
rewritten `loss_log.tsv`, so interruption loses at most the epoch in flight.

All shuffling and cell-label tie-breaking draws from per-epoch streams keyed
by (seed, stage, purpose, epoch). A resumed run therefore consumes exactly
the rng values the uninterrupted run would have.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .checkpoint import load_checkpoint, save_checkpoint
from .imaging import load_image
from .model import LossConfig, ModelParams, edgemap_to_cells, train_step
from .seeding import rng_for

log = logging.getLogger(__name__)

_EPOCH_RE = re.compile(r"epoch_(\d+)\.ckpt$")


@dataclass
class StageData:
    """In-memory training set: one image stack plus two binary label stacks."""

    stems: list
    images: np.ndarray       # (n, H, W) float32 in [0, 1]
    pixel_maps: np.ndarray   # (n, H, W) bool, supervises the pixel head
    object_maps: np.ndarray  # (n, H, W) bool, supervises the object head


def _crop8(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    return arr[:h - h % 8, :w - w % 8]


def load_stage_data(dataset, pixel_kind: str, object_kind: str) -> StageData:
    """Cache a dataset in RAM, cropped to multiples of 8 for the encoder.

    Samples missing either label kind are skipped with a warning; mixed
    image sizes are an error because batching stacks the whole set.
    """
    stems, images, pixel_maps, object_maps = [], [], [], []
    for sample in dataset.samples:
        if pixel_kind not in sample.labels or object_kind not in sample.labels:
            log.warning("sample %s lacks %s/%s labels, skipped",
                        sample.stem, pixel_kind, object_kind)
            continue
        raw = load_image(sample.image_path)
        img = _crop8(raw)
        if img.shape[0] < 8 or img.shape[1] < 8:
            raise ValueError(f"sample {sample.stem}: image smaller than one 8x8 cell")
        if images and img.shape != images[0].shape:
            raise ValueError(
                f"training needs uniform image sizes: {sample.stem} is "
                f"{img.shape}, {stems[0]} is {images[0].shape}")
        maps = []
        for kind in (pixel_kind, object_kind):
            lab = load_image(sample.labels[kind])
            if lab.shape != raw.shape:
                raise ValueError(
                    f"sample {sample.stem}: {kind} shape {lab.shape} differs "
                    f"from image shape {raw.shape}")
            maps.append(_crop8(lab) > 0.5)
        stems.append(sample.stem)
        images.append(img)
        pixel_maps.append(maps[0])
        object_maps.append(maps[1])
    if not stems:
        raise ValueError(
            f"dataset {dataset.root}: no sample has both {pixel_kind!r} "
            f"and {object_kind!r} labels")
    return StageData(stems=stems,
                     images=np.stack(images),
                     pixel_maps=np.stack(pixel_maps),
                     object_maps=np.stack(object_maps))


def epoch_of_checkpoint(path) -> int:
    m = _EPOCH_RE.search(Path(path).name)
    if not m:
        raise ValueError(
            f"cannot infer epoch from {path}: expected a name like epoch_007.ckpt")
    return int(m.group(1))


def resume_state(ckpt_path, lr: float):
    """Load (mp, adam, start_epoch) for resumption.

    Checkpoints carry optimizer scalars as float32. Their rounding error is
    harmless to the loss trajectory but keeps a resumed run from being
    bit-identical to an uninterrupted one (one-ulp parameter differences get
    amplified to ~lr by Adam's normalized steps within a step or two), so
    the exact values are restored from the caller and the class defaults.
    """
    mp, adam = load_checkpoint(ckpt_path)
    if adam is None:
        raise ValueError(f"{ckpt_path} has no optimizer state, cannot resume")
    adam.lr = lr
    adam.beta1 = AdamState.beta1
    adam.beta2 = AdamState.beta2
    adam.eps = AdamState.eps
    return mp, adam, epoch_of_checkpoint(ckpt_path)


def read_loss_log(path) -> list:
    """Parse loss_log.tsv rows as (epoch, l_pix, l_obj) tuples."""
    rows = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        e, lp, lo = line.split("\t")
        rows.append((int(e), float(lp), float(lo)))
    return rows


def _write_loss_log(path: Path, rows) -> None:
    text = "epoch\tl_pix\tl_obj\n" + "".join(
        f"{e}\t{lp:.6f}\t{lo:.6f}\n" for e, lp, lo in rows)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def train_stage(data: StageData, *, stage: str, seed: int, lr: float,
                lam: float, epochs: int, batch_size: int, out_dir,
                mp: ModelParams | None = None,
                adam: AdamState | None = None,
                start_epoch: int = 0,
                prior_rows=None):
    """Run epochs ``start_epoch+1 .. epochs``; returns (mp, adam, log rows).

    Pass a loaded (mp, adam, start_epoch, prior_rows) to resume; defaults
    start a fresh model. ``stage`` keys the rng streams, so the two training
    stages never share randomness even under one seed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if epochs < start_epoch:
        raise ValueError(f"epochs={epochs} is below resume epoch {start_epoch}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = LossConfig(lam=lam).validate()
    if mp is None:
        mp = ModelParams.create(rng_for(seed, stage, "init"))
    if adam is None:
        adam = AdamState.create(mp.params, lr=lr)
    rows = list(prior_rows) if prior_rows else []

    n = len(data.stems)
    for epoch in range(start_epoch + 1, epochs + 1):
        cell_rng = rng_for(seed, stage, "cells", epoch)
        pixel_cells = np.stack([edgemap_to_cells(m, cell_rng)
                                for m in data.pixel_maps])
        object_cells = np.stack([edgemap_to_cells(m, cell_rng)
                                 for m in data.object_maps])
        perm = rng_for(seed, stage, "order", epoch).permutation(n)

        pix_sum = obj_sum = 0.0
        for lo_idx in range(0, n, batch_size):
            batch = perm[lo_idx:lo_idx + batch_size]
            lp, lo = train_step(data.images[batch],
                                pixel_cells[batch],
                                object_cells[batch],
                                data.object_maps[batch].astype(np.float32),
                                mp, adam, cfg)
            pix_sum += lp * len(batch)
            obj_sum += lo * len(batch)
        rows.append((epoch, pix_sum / n, obj_sum / n))
        save_checkpoint(mp, adam, out_dir / f"epoch_{epoch:03d}.ckpt")
        _write_loss_log(out_dir / "loss_log.tsv", rows)
        log.info("%s epoch %d: l_pix=%.4f l_obj=%.4f",
                 stage, epoch, rows[-1][1], rows[-1][2])
    return mp, adam, rows
