"""Raster primitives shared by the pipeline stages.

Images and edge maps are plain 2-D float32 numpy arrays, row-major, values
in [0, 1]. Edge maps use the same representation with values read as edge
probability. All functions are pure; none mutate their inputs.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image as PILImage

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, 3) raster in [0,1] to luma, clamped to [0,1]."""
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"to_grayscale: expected (H, W, 3), got {rgb.shape}")
    return np.clip(rgb @ _LUMA, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled, normalized 1-D Gaussian with radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ValueError(f"gaussian_kernel: sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return (k / k.sum()).astype(np.float32)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with edge-replicate padding."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"gaussian_blur: expected 2-D image, got shape {img.shape}")
    k = gaussian_kernel(sigma)
    r = len(k) // 2

    padded = np.pad(img, ((0, 0), (r, r)), mode="edge").astype(np.float64)
    out = np.zeros(img.shape, dtype=np.float64)
    for i, kv in enumerate(k):
        out += kv * padded[:, i:i + img.shape[1]]

    padded = np.pad(out, ((r, r), (0, 0)), mode="edge")
    out2 = np.zeros(img.shape, dtype=np.float64)
    for i, kv in enumerate(k):
        out2 += kv * padded[i:i + img.shape[0], :]
    return np.clip(out2, 0.0, 1.0).astype(np.float32)


def dilate(binary: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a (2r+1)^2 square structuring element.

    The input is binarized at 0.5 first; output values are {0, 1}.
    """
    if radius < 0:
        raise ValueError(f"dilate: radius must be nonnegative, got {radius}")
    on = (np.asarray(binary, dtype=np.float32) > 0.5)
    if radius == 0:
        return on.astype(np.float32)
    H, W = on.shape
    padded = np.zeros((H + 2 * radius, W + 2 * radius), dtype=bool)
    padded[radius:radius + H, radius:radius + W] = on
    out = np.zeros((H, W), dtype=bool)
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            np.logical_or(out, padded[di:di + H, dj:dj + W], out=out)
    return out.astype(np.float32)


def _zhang_suen_pass(img: np.ndarray, first_subiter: bool) -> int:
    """One Zhang-Suen subiteration in place; returns number of deletions."""
    H, W = img.shape
    p = np.zeros((H + 2, W + 2), dtype=np.uint8)
    p[1:-1, 1:-1] = img
    # neighbors clockwise from north: p2..p9
    p2 = p[0:-2, 1:-1]
    p3 = p[0:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, 0:-2]
    p8 = p[1:-1, 0:-2]
    p9 = p[0:-2, 0:-2]
    ring = [p2, p3, p4, p5, p6, p7, p8, p9]

    b = sum(n.astype(np.int32) for n in ring)
    a = np.zeros((H, W), dtype=np.int32)
    for i in range(8):
        cur = ring[i]
        nxt = ring[(i + 1) % 8]
        a += ((cur == 0) & (nxt == 1))

    if first_subiter:
        c1 = (p2 * p4 * p6) == 0
        c2 = (p4 * p6 * p8) == 0
    else:
        c1 = (p2 * p4 * p8) == 0
        c2 = (p2 * p6 * p8) == 0

    kill = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
    img[kill] = 0
    return int(kill.sum())


def thin(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a 1-pixel-wide skeleton."""
    img = (np.asarray(binary, dtype=np.float32) > 0.5).astype(np.uint8)
    while True:
        removed = _zhang_suen_pass(img, True)
        removed += _zhang_suen_pass(img, False)
        if removed == 0:
            break
    return img.astype(np.float32)


def minmax_normalize(arr: np.ndarray) -> np.ndarray:
    """Affine rescale to [0,1]; a constant map normalizes to all zeros."""
    arr = np.asarray(arr, dtype=np.float32)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / np.float32(hi - lo)


# ---------------------------------------------------------------------------
# 8-bit I/O
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM as a grayscale float image in [0,1].

    RGB(A) and palette inputs are collapsed with the luma weights.
    """
    with PILImage.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float32) / 255.0
        elif im.mode in ("RGB", "RGBA", "P"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            arr = to_grayscale(rgb)
        else:
            raise ValueError(f"load_image: unsupported mode {im.mode!r} in {path}")
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Write a [0,1] float image as 8-bit grayscale (PNG or PGM by suffix)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"save_image: expected 2-D image, got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q, mode="L").save(path)


def quantize_roundtrip(img: np.ndarray) -> np.ndarray:
    """The value actually stored by save_image followed by load_image."""
    q = np.clip(np.rint(np.asarray(img, dtype=np.float32) * 255.0), 0, 255)
    return (q / 255.0).astype(np.float32)
