"""Self-annotation of real images: two pseudo-label streams plus their union.

The object-level stream runs a classical chain (blur, L0 smoothing, Canny,
dilation) that favors strong region boundaries. The pixel-level stream
averages a learned predictor over random homography views and binarizes the
result. Both streams are exported separately (each head trains on its own)
together with their OR for inspection and ablations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classical import canny, l0_smooth
from .homography import AnnotatorConfig, homography_adapt
from .imaging import dilate, gaussian_blur, load_image, save_image
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass
class LabelConfig:
    """Parameters of the classical object-level chain and the pixel binarizer."""

    blur_sigma: float = 1.5
    l0_lambda: float = 0.02
    canny_low: float = 0.1
    canny_high: float = 0.2
    dilate_radius: int = 1
    pixel_threshold: float = 0.005

    def validate(self) -> "LabelConfig":
        if not self.blur_sigma > 0:
            raise ValueError(f"LabelConfig: blur_sigma must be positive, got {self.blur_sigma}")
        if not self.l0_lambda > 0:
            raise ValueError(f"LabelConfig: l0_lambda must be positive, got {self.l0_lambda}")
        if not 0 < self.canny_low < self.canny_high < 1:
            raise ValueError(
                f"LabelConfig: need 0 < low < high < 1, got {self.canny_low}, {self.canny_high}")
        if self.dilate_radius < 0 or int(self.dilate_radius) != self.dilate_radius:
            raise ValueError(
                f"LabelConfig: dilate_radius must be a nonnegative integer, "
                f"got {self.dilate_radius}")
        if not 0 < self.pixel_threshold < 1:
            raise ValueError(
                f"LabelConfig: pixel_threshold must lie in (0, 1), got {self.pixel_threshold}")
        return self


def object_level_labels(img: np.ndarray, cfg: LabelConfig) -> np.ndarray:
    """Binary boundary band: dilate(canny(l0_smooth(blur(img))))."""
    cfg.validate()
    smoothed = l0_smooth(gaussian_blur(np.asarray(img, dtype=np.float32),
                                       cfg.blur_sigma), cfg.l0_lambda)
    edges = canny(smoothed, cfg.canny_low, cfg.canny_high)
    return dilate(edges, int(cfg.dilate_radius))


def pixel_level_labels(img: np.ndarray, predictor, cfg: AnnotatorConfig,
                       threshold: float,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Binarized homography-averaged predictor response."""
    if not 0 < threshold < 1:
        raise ValueError(f"pixel_level_labels: threshold must lie in (0, 1), got {threshold}")
    averaged = homography_adapt(img, predictor, cfg, rng=rng)
    return (averaged >= threshold).astype(np.float32)


def combine_labels(pixel_map: np.ndarray, object_map: np.ndarray) -> np.ndarray:
    """Pixelwise OR of two binary maps (saturating union of the streams)."""
    a = np.asarray(pixel_map)
    b = np.asarray(object_map)
    if a.shape != b.shape:
        raise ValueError(f"combine_labels: shape mismatch {a.shape} vs {b.shape}")
    return ((a > 0.5) | (b > 0.5)).astype(np.float32)


def _complete(stem: str, dirs) -> bool:
    return all((d / f"{stem}.png").exists() for d in dirs)


def export_labels(dataset_dir, predictor, hcfg: AnnotatorConfig,
                  lcfg: LabelConfig):
    """Annotate every PNG under images/; returns [(name, error), ...].

    Already-annotated images (all three outputs present) are skipped, so an
    interrupted run resumes where it stopped. Per-image failures are logged
    and skipped; callers decide how to surface them.
    """
    root = Path(dataset_dir)
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"export_labels: no images/ under {root}")
    lcfg.validate()
    out_dirs = [root / "pixel_labels", root / "object_labels", root / "combined_labels"]
    for d in out_dirs:
        d.mkdir(parents=True, exist_ok=True)

    failures = []
    done = []
    for img_path in sorted(image_dir.glob("*.png")):
        stem = img_path.stem
        if _complete(stem, out_dirs):
            done.append(stem)
            continue
        try:
            img = load_image(img_path)
            pixel = pixel_level_labels(img, predictor, hcfg, lcfg.pixel_threshold,
                                       rng=rng_for(hcfg.rng_seed, "annotate", stem))
            objm = object_level_labels(img, lcfg)
            combined = combine_labels(pixel, objm)
            save_image(out_dirs[0] / f"{stem}.png", pixel)
            save_image(out_dirs[1] / f"{stem}.png", objm)
            save_image(out_dirs[2] / f"{stem}.png", combined)
            done.append(stem)
        except Exception as exc:
            log.warning("annotation failed for %s: %s", img_path.name, exc)
            failures.append((img_path.name, str(exc)))

    manifest = "".join(
        f"{stem}\tpixel_labels/{stem}.png\tobject_labels/{stem}.png"
        f"\tcombined_labels/{stem}.png\n" for stem in sorted(done))
    manifest_path = root / "labels_manifest.txt"
    if not (manifest_path.exists()
            and manifest_path.read_text(encoding="utf-8") == manifest):
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(manifest)
    return failures
