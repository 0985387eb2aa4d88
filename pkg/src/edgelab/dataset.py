"""Flat on-disk dataset layout: images plus same-stem label files.

A dataset root contains ``images/`` and any of ``edges/`` (ground truth),
``pixel_labels/``, ``object_labels/``, ``combined_labels/``. Pairing is by
file stem; nested subdirectories are ignored. Label files without a
matching image are collected as warnings, not errors, so a half-annotated
directory still ingests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

_IMAGE_SUFFIXES = (".png", ".pgm")
_LABEL_DIRS = ("edges", "pixel_labels", "object_labels", "combined_labels")


@dataclass
class Sample:
    stem: str
    image_path: Path
    labels: dict = field(default_factory=dict)

    def label(self, kind: str):
        """Path of one label file (``edges``, ``pixel_labels``, ...) or None."""
        return self.labels.get(kind)


@dataclass
class Dataset:
    root: Path
    samples: list
    warnings: list

    def __len__(self):
        return len(self.samples)

    def require_labels(self, kind: str) -> list:
        """Samples carrying the given label kind; raises if none do."""
        have = [s for s in self.samples if kind in s.labels]
        if not have:
            raise ValueError(
                f"dataset {self.root}: no sample has a {kind!r} label")
        return have


def flat_image_files(directory: Path) -> dict:
    """stem -> path for image files directly inside ``directory``."""
    found = {}
    if not directory.is_dir():
        return found
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES:
            found.setdefault(p.stem, p)
    return found


def ingest_dataset(root) -> Dataset:
    """Enumerate a dataset directory into stem-paired samples.

    Samples come back in lexicographic stem order regardless of filesystem
    iteration order, so downstream batching is stable across machines.
    """
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"dataset {root}: missing images/ directory")
    images = flat_image_files(images_dir)
    if not images:
        raise ValueError(f"dataset {root}: images/ holds no .png or .pgm files")

    warnings = []
    by_kind = {}
    for kind in _LABEL_DIRS:
        labels = flat_image_files(root / kind)
        for stem in sorted(set(labels) - set(images)):
            warnings.append(
                f"{kind}/{labels[stem].name} has no matching image, ignored")
        by_kind[kind] = labels

    samples = []
    for stem in sorted(images):
        labels = {kind: by_kind[kind][stem]
                  for kind in _LABEL_DIRS if stem in by_kind[kind]}
        samples.append(Sample(stem=stem, image_path=images[stem], labels=labels))
    return Dataset(root=root, samples=samples, warnings=warnings)
