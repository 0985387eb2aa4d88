"""Random homography sampling, bilinear warping, and prediction averaging.

Homographies act on normalized coordinates: the unit square [0,1]^2 covers
the image regardless of resolution, x right, y down. warp_image resamples by
inverse mapping, so a matrix that scales coordinates up zooms content in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so m[2,2] == 1."""

    m: np.ndarray

    @classmethod
    def from_matrix(cls, m) -> "Homography":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"Homography: expected 3x3 matrix, got {m.shape}")
        det = np.linalg.det(m)
        if abs(det) <= 1e-8:
            raise ValueError(f"Homography: matrix is singular (det={det:.3e})")
        residual = np.abs(np.linalg.inv(m) @ m - np.eye(3)).max()
        if residual >= 1e-6:
            raise ValueError(
                f"Homography: matrix too ill-conditioned (inverse residual "
                f"{residual:.3e})")
        if m[2, 2] == 0:
            raise ValueError("Homography: m[2,2] is zero, cannot normalize")
        return cls(m=m / m[2, 2])

    @classmethod
    def identity(cls) -> "Homography":
        return cls(m=np.eye(3))

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.m))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform (N, 2) points (x, y)."""
        pts = np.asarray(pts, dtype=np.float64)
        ones = np.ones((len(pts), 1))
        ph = np.hstack([pts, ones]) @ self.m.T
        return ph[:, :2] / ph[:, 2:3]


@dataclass
class AnnotatorConfig:
    """Sampling ranges for homography adaptation."""

    n_homographies: int = 100
    rotation_max_deg: float = 25.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    perspective_amp: float = 0.1
    translation_frac: float = 0.1
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_homographies < 1:
            raise ValueError("AnnotatorConfig: n_homographies must be >= 1")
        if not (0 < self.scale_min <= self.scale_max):
            raise ValueError("AnnotatorConfig: need 0 < scale_min <= scale_max")
        if self.rotation_max_deg < 0 or self.perspective_amp < 0 \
                or self.translation_frac < 0:
            raise ValueError("AnnotatorConfig: amplitudes must be nonnegative")


def _dlt_square_to(corners: np.ndarray) -> np.ndarray:
    """Homography mapping the unit-square corners onto ``corners``."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((sx, sy), (dx, dy)) in enumerate(zip(_UNIT_CORNERS, corners)):
        a[2 * i] = [sx, sy, 1, 0, 0, 0, -dx * sx, -dx * sy]
        a[2 * i + 1] = [0, 0, 0, sx, sy, 1, -dy * sx, -dy * sy]
        b[2 * i] = dx
        b[2 * i + 1] = dy
    h = np.linalg.solve(a, b)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


def sample_homography(cfg: AnnotatorConfig, rng: np.random.Generator) -> Homography:
    """Draw a random transform from center-anchored rotation, scale,
    translation, and per-corner perspective jitter.

    The construction places a source quadrilateral (the region the output
    frame will sample from) and maps it onto the unit square, so scale > 1
    zooms in. All four source corners must land inside [-0.3, 1.3]^2;
    violating draws are rejected and resampled, up to 100 attempts.
    """
    cfg.validate()
    for _ in range(100):
        theta = np.radians(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
        s = rng.uniform(cfg.scale_min, cfg.scale_max)
        tx = rng.uniform(-cfg.translation_frac, cfg.translation_frac)
        ty = rng.uniform(-cfg.translation_frac, cfg.translation_frac)
        jitter = rng.uniform(-cfg.perspective_amp, cfg.perspective_amp, size=(4, 2))

        c, si = np.cos(theta), np.sin(theta)
        center = np.array([[1, 0, 0.5], [0, 1, 0.5], [0, 0, 1.0]])
        uncenter = np.array([[1, 0, -0.5], [0, 1, -0.5], [0, 0, 1.0]])
        rot = np.array([[c, -si, 0], [si, c, 0], [0, 0, 1.0]])
        scale = np.array([[s, 0, 0], [0, s, 0], [0, 0, 1.0]])
        trans = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1.0]])
        fwd = trans @ center @ rot @ scale @ uncenter

        src = np.linalg.inv(fwd)
        ph = np.hstack([_UNIT_CORNERS, np.ones((4, 1))]) @ src.T
        placed = ph[:, :2] / ph[:, 2:3] + jitter
        if placed.min() < -0.3 or placed.max() > 1.3:
            continue
        if np.array_equal(placed, _UNIT_CORNERS):
            return Homography.identity()
        return Homography.from_matrix(np.linalg.inv(_dlt_square_to(placed)))
    raise RuntimeError(
        "sample_homography: no draw kept all corners inside [-0.3, 1.3]^2 "
        "after 100 attempts; sampling ranges are too aggressive")


def warp_image(img: np.ndarray, h: Homography):
    """Inverse-mapped bilinear warp; returns (warped, valid_mask).

    A pixel is valid when its source point lies inside the input raster
    (pixel-center coordinates); invalid pixels are 0 in both outputs.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"warp_image: expected 2-D image, got shape {img.shape}")
    Hpx, Wpx = img.shape
    if np.array_equal(h.m, np.eye(3)):
        return img.copy(), np.ones((Hpx, Wpx), dtype=np.float32)

    hinv = h.inverse().m
    xs = (np.arange(Wpx, dtype=np.float64) + 0.5) / Wpx
    ys = (np.arange(Hpx, dtype=np.float64) + 0.5) / Hpx
    gx, gy = np.meshgrid(xs, ys)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = hinv[2, 0] * gx + hinv[2, 1] * gy + hinv[2, 2]
        sx = (hinv[0, 0] * gx + hinv[0, 1] * gy + hinv[0, 2]) / w
        sy = (hinv[1, 0] * gx + hinv[1, 1] * gy + hinv[1, 2]) / w
    px = sx * Wpx - 0.5
    py = sy * Hpx - 0.5
    with np.errstate(invalid="ignore"):
        valid = (px >= 0) & (px <= Wpx - 1) & (py >= 0) & (py <= Hpx - 1)

    px = np.where(valid, px, 0.0)
    py = np.where(valid, py, 0.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    x1 = np.minimum(x0 + 1, Wpx - 1)
    y1 = np.minimum(y0 + 1, Hpx - 1)
    fx = px - x0
    fy = py - y0
    v = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
         + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    out = np.where(valid, v, 0.0).astype(np.float32)
    return out, valid.astype(np.float32)


def homography_adapt(img: np.ndarray, predictor, cfg: AnnotatorConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Average the predictor over random warps, unwarped back to the frame.

    The first transform is always the identity. Each warp's prediction is
    unwarped along with its validity mask, and the output is the per-pixel
    mask-weighted mean (0 where nothing ever landed), so pixels that leave
    the frame under some warp do not dilute the average.
    """
    cfg.validate()
    img = np.asarray(img, dtype=np.float32)
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    def predict_checked(x):
        p = np.asarray(predictor(x))
        if p.shape != img.shape:
            raise ValueError(
                f"homography_adapt: predictor returned shape {p.shape} "
                f"for input shape {img.shape}")
        return p.astype(np.float32)

    num = predict_checked(img).astype(np.float64)
    den = np.ones(img.shape, dtype=np.float64)
    for _ in range(cfg.n_homographies - 1):
        h = sample_homography(cfg, rng)
        wimg, wmask = warp_image(img, h)
        pred = predict_checked(wimg)
        hinv = h.inverse()
        up, _ = warp_image(pred * wmask, hinv)
        um, _ = warp_image(wmask, hinv)
        num += up
        den += um

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 1e-8, num / den, 0.0)
    return out.astype(np.float32)
