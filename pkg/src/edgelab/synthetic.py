"""Synthetic pretraining data: geometric shapes with exact edge ground truth.

Samples are built on a clamped Gaussian-noise background. Shapes are drawn
opaquely in draw order onto both the working image and a noise-free "clean"
twin; ground truth is the union of every shape's rasterized boundary, minus
pixels whose local contrast on the clean twin was buried by later shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import gaussian_blur, save_image
from .seeding import rng_for

SHAPE_KINDS = ("segment", "polygon", "star", "ellipse", "cube", "checkerboard")

_CONTRAST_FLOOR = 0.15
_BURIED_CONTRAST = 0.1


@dataclass
class SyntheticSample:
    image: np.ndarray
    gt_edges: np.ndarray
    shape_inventory: list


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def bresenham_line(r0: int, c0: int, r1: int, c1: int) -> np.ndarray:
    """Integer line pixels from (r0,c0) to (r1,c1) inclusive, shape (N,2)."""
    pts = []
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        pts.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return np.array(pts, dtype=np.int64)


def midpoint_ellipse(cy: int, cx: int, ry: int, rx: int) -> np.ndarray:
    """Boundary pixels of an axis-aligned ellipse, midpoint algorithm."""
    if rx < 1 or ry < 1:
        raise ValueError(f"midpoint_ellipse: radii must be >= 1, got {ry}, {rx}")
    pts = set()

    def plot4(x, y):
        pts.add((cy + y, cx + x))
        pts.add((cy + y, cx - x))
        pts.add((cy - y, cx + x))
        pts.add((cy - y, cx - x))

    rx2 = rx * rx
    ry2 = ry * ry
    # region 1: slope > -1
    x, y = 0, ry
    d1 = ry2 - rx2 * ry + 0.25 * rx2
    dx = 2 * ry2 * x
    dy = 2 * rx2 * y
    while dx < dy:
        plot4(x, y)
        if d1 < 0:
            x += 1
            dx += 2 * ry2
            d1 += dx + ry2
        else:
            x += 1
            y -= 1
            dx += 2 * ry2
            dy -= 2 * rx2
            d1 += dx - dy + ry2
    # region 2: slope <= -1
    d2 = ry2 * (x + 0.5) ** 2 + rx2 * (y - 1) ** 2 - rx2 * ry2
    while y >= 0:
        plot4(x, y)
        if d2 > 0:
            y -= 1
            dy -= 2 * rx2
            d2 += rx2 - dy
        else:
            y -= 1
            x += 1
            dx += 2 * ry2
            dy -= 2 * rx2
            d2 += dx - dy + rx2
    return np.array(sorted(pts), dtype=np.int64)


def rasterize_segments(segments) -> np.ndarray:
    """Union of Bresenham pixels over (N, 2, 2) integer (r, c) endpoint pairs."""
    chunks = [bresenham_line(int(r0), int(c0), int(r1), int(c1))
              for (r0, c0), (r1, c1) in segments]
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.vstack(chunks), axis=0)


def fill_polygon_mask(verts: np.ndarray, shape) -> np.ndarray:
    """Even-odd scanline fill of an integer-vertex polygon."""
    H, W = shape
    verts = np.asarray(verts, dtype=np.float64)
    mask = np.zeros((H, W), dtype=bool)
    n = len(verts)
    rmin = max(int(np.floor(verts[:, 0].min())), 0)
    rmax = min(int(np.ceil(verts[:, 0].max())), H - 1)
    for y in range(rmin, rmax + 1):
        xs = []
        for k in range(n):
            r1, c1 = verts[k]
            r2, c2 = verts[(k + 1) % n]
            if r1 == r2:
                continue
            if min(r1, r2) <= y < max(r1, r2):
                t = (y - r1) / (r2 - r1)
                xs.append(c1 + t * (c2 - c1))
        xs.sort()
        for a, b in zip(xs[::2], xs[1::2]):
            j0 = max(int(np.ceil(a)), 0)
            j1 = min(int(np.floor(b)), W - 1)
            if j0 <= j1:
                mask[y, j0:j1 + 1] = True
    return mask


def _polygon_segments(verts: np.ndarray) -> np.ndarray:
    v = np.asarray(verts, dtype=np.int64)
    return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


def _clip_points(pts: np.ndarray, shape) -> np.ndarray:
    H, W = shape
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < H) & (pts[:, 1] >= 0) & (pts[:, 1] < W)
    return pts[ok]


# ---------------------------------------------------------------------------
# shape placement
# ---------------------------------------------------------------------------


def _contrasting_fill(rng, avoid: float, floor: float = _CONTRAST_FLOOR) -> float:
    """Uniform over [0,1] excluding the band within ``floor`` of ``avoid``."""
    lo = max(avoid - floor, 0.0)
    hi = max(1.0 - (avoid + floor), 0.0)
    u = rng.uniform(0.0, lo + hi)
    return float(u) if u < lo else float(avoid + floor + (u - lo))


def _paint(image, clean, pts, value):
    image[pts[:, 0], pts[:, 1]] = value
    clean[pts[:, 0], pts[:, 1]] = value


def _paint_mask(image, clean, mask, value):
    image[mask] = value
    clean[mask] = value


def _rand_center(rng, H, W):
    return (int(rng.uniform(0.2 * H, 0.8 * H)), int(rng.uniform(0.2 * W, 0.8 * W)))


def _add_segment(image, clean, rng):
    H, W = image.shape
    fill = _contrasting_fill(rng, 0.5)
    while True:
        r0, c0 = _rand_center(rng, H, W)
        r1 = int(rng.uniform(0, H))
        c1 = int(rng.uniform(0, W))
        if abs(r1 - r0) + abs(c1 - c0) >= 10:
            break
    segs = np.array([[[r0, c0], [r1, c1]]], dtype=np.int64)
    pts = _clip_points(rasterize_segments(segs), image.shape)
    _paint(image, clean, pts, fill)
    return ("segment", segs), pts


def _circle_polygon_verts(rng, H, W, nmin, nmax):
    n = int(rng.integers(nmin, nmax + 1))
    cy, cx = _rand_center(rng, H, W)
    radius = rng.uniform(0.12, 0.35) * min(H, W)
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
        if gaps.min() > 0.3:
            break
    rr = np.round(cy + radius * np.sin(angles)).astype(np.int64)
    cc = np.round(cx + radius * np.cos(angles)).astype(np.int64)
    return np.stack([rr, cc], axis=1)


def _add_polygon(image, clean, rng):
    verts = _circle_polygon_verts(rng, *image.shape, 3, 8)
    fill = _contrasting_fill(rng, 0.5)
    _paint_mask(image, clean, fill_polygon_mask(verts, image.shape), fill)
    segs = _polygon_segments(verts)
    pts = _clip_points(rasterize_segments(segs), image.shape)
    _paint(image, clean, pts, fill)
    return ("polygon", segs), pts


def _add_star(image, clean, rng):
    H, W = image.shape
    k = int(rng.integers(5, 9))
    cy, cx = _rand_center(rng, H, W)
    outer = rng.uniform(0.15, 0.4) * min(H, W)
    inner = outer * rng.uniform(0.35, 0.6)
    phase = rng.uniform(0, 2 * np.pi)
    angles = phase + np.arange(2 * k) * np.pi / k
    radii = np.where(np.arange(2 * k) % 2 == 0, outer, inner)
    rr = np.round(cy + radii * np.sin(angles)).astype(np.int64)
    cc = np.round(cx + radii * np.cos(angles)).astype(np.int64)
    verts = np.stack([rr, cc], axis=1)
    fill = _contrasting_fill(rng, 0.5)
    _paint_mask(image, clean, fill_polygon_mask(verts, image.shape), fill)
    segs = _polygon_segments(verts)
    pts = _clip_points(rasterize_segments(segs), image.shape)
    _paint(image, clean, pts, fill)
    return ("star", segs), pts


def _add_ellipse(image, clean, rng):
    H, W = image.shape
    cy, cx = _rand_center(rng, H, W)
    ry = int(rng.uniform(0.08, 0.3) * H)
    rx = int(rng.uniform(0.08, 0.3) * W)
    ry, rx = max(ry, 3), max(rx, 3)
    fill = _contrasting_fill(rng, 0.5)
    yy, xx = np.mgrid[0:H, 0:W]
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    _paint_mask(image, clean, inside, fill)
    pts = _clip_points(midpoint_ellipse(cy, cx, ry, rx), image.shape)
    _paint(image, clean, pts, fill)
    return ("ellipse", ((cy, cx), (ry, rx))), pts


_CUBE_CORNERS = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1)
                          for z in (-1, 1)], dtype=np.float64)
_CUBE_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8)
               if np.sum(np.abs(_CUBE_CORNERS[a] - _CUBE_CORNERS[b])) == 2]


def _rotation_matrix(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.sqrt((q * q).sum())
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _add_cube(image, clean, rng):
    H, W = image.shape
    cy, cx = _rand_center(rng, H, W)
    half = rng.uniform(0.1, 0.25) * min(H, W)
    rot = _rotation_matrix(rng)
    proj = (_CUBE_CORNERS @ rot.T)[:, :2] * half
    corners = np.round(proj + [cy, cx]).astype(np.int64)
    segs = np.array([[corners[a], corners[b]] for a, b in _CUBE_EDGES],
                    dtype=np.int64)
    fill = _contrasting_fill(rng, 0.5)
    pts = _clip_points(rasterize_segments(segs), image.shape)
    _paint(image, clean, pts, fill)
    return ("cube", segs), pts


def _add_checkerboard(image, clean, rng):
    H, W = image.shape
    nrows = int(rng.integers(2, 5))
    ncols = int(rng.integers(2, 5))
    ch = int(rng.uniform(4, max(H // 6, 5)))
    cw = int(rng.uniform(4, max(W // 6, 5)))
    r0 = int(rng.uniform(0.05 * H, max(H - nrows * ch - 0.05 * H, 0.1 * H)))
    c0 = int(rng.uniform(0.05 * W, max(W - ncols * cw - 0.05 * W, 0.1 * W)))
    fill_a = _contrasting_fill(rng, 0.5)
    while True:
        fill_b = _contrasting_fill(rng, 0.5)
        if abs(fill_b - fill_a) >= _CONTRAST_FLOOR:
            break
    r1 = min(r0 + nrows * ch, H - 1)
    c1 = min(c0 + ncols * cw, W - 1)
    for i in range(nrows):
        for j in range(ncols):
            rr0, rr1 = r0 + i * ch, min(r0 + (i + 1) * ch, r1)
            cc0, cc1 = c0 + j * cw, min(c0 + (j + 1) * cw, c1)
            if rr0 >= rr1 or cc0 >= cc1:
                continue
            val = fill_a if (i + j) % 2 == 0 else fill_b
            image[rr0:rr1 + 1, cc0:cc1 + 1] = val
            clean[rr0:rr1 + 1, cc0:cc1 + 1] = val
    segs = []
    for i in range(nrows + 1):
        rr = min(r0 + i * ch, r1)
        segs.append([[rr, c0], [rr, c1]])
    for j in range(ncols + 1):
        cc = min(c0 + j * cw, c1)
        segs.append([[r0, cc], [r1, cc]])
    segs = np.array(segs, dtype=np.int64)
    pts = _clip_points(rasterize_segments(segs), image.shape)
    return ("checkerboard", segs), pts


_ADDERS = {
    "segment": _add_segment,
    "polygon": _add_polygon,
    "star": _add_star,
    "ellipse": _add_ellipse,
    "cube": _add_cube,
    "checkerboard": _add_checkerboard,
}


# ---------------------------------------------------------------------------
# sample and dataset generation
# ---------------------------------------------------------------------------


def _local_range(clean: np.ndarray) -> np.ndarray:
    """Per-pixel max minus min over the 3x3 neighborhood, edge-replicated."""
    H, W = clean.shape
    p = np.pad(clean, 1, mode="edge")
    mx = np.full((H, W), -np.inf)
    mn = np.full((H, W), np.inf)
    for di in range(3):
        for dj in range(3):
            win = p[di:di + H, dj:dj + W]
            np.maximum(mx, win, out=mx)
            np.minimum(mn, win, out=mn)
    return mx - mn


def generate_sample(height: int, width: int, rng: np.random.Generator,
                    n_shapes: int | None = None) -> SyntheticSample:
    """One noise-background sample with 1-8 shapes and exact GT edges.

    ``n_shapes`` overrides the random shape count (0 gives a pure noise
    image with empty ground truth).
    """
    if height < 32 or width < 32:
        raise ValueError(f"generate_sample: min size is 32x32, got {height}x{width}")
    image = np.clip(rng.normal(0.5, 0.12, size=(height, width)), 0.0, 1.0)
    if rng.uniform() < 0.5:
        image = gaussian_blur(image.astype(np.float32), rng.uniform(0.5, 1.5))
    image = image.astype(np.float64)
    clean = np.full((height, width), 0.5)

    if n_shapes is None:
        n_shapes = int(rng.integers(1, 9))
    inventory = []
    boundary_sets = []
    for _ in range(n_shapes):
        kind = SHAPE_KINDS[int(rng.integers(0, len(SHAPE_KINDS)))]
        entry, pts = _ADDERS[kind](image, clean, rng)
        inventory.append(entry)
        boundary_sets.append(pts)

    gt = np.zeros((height, width), dtype=np.float32)
    if boundary_sets:
        allpts = np.vstack([p for p in boundary_sets if len(p)])
        if len(allpts):
            visible = _local_range(clean) >= _BURIED_CONTRAST
            keep = visible[allpts[:, 0], allpts[:, 1]]
            kept = allpts[keep]
            gt[kept[:, 0], kept[:, 1]] = 1.0

    blur_sigma = rng.uniform(0.0, 1.0)
    if blur_sigma > 0.02:
        image = gaussian_blur(image.astype(np.float32), blur_sigma).astype(np.float64)
    noise_sigma = rng.uniform(0.0, 0.05)
    image = image + rng.normal(0.0, 1.0, size=image.shape) * noise_sigma
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SyntheticSample(image=image, gt_edges=gt, shape_inventory=inventory)


def generate_dataset(count: int, height: int, width: int, seed: int,
                     out_dir) -> None:
    """Write ``count`` samples as PNG pairs plus a tab-separated manifest."""
    if count < 1:
        raise ValueError(f"generate_dataset: count must be >= 1, got {count}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "edges").mkdir(parents=True, exist_ok=True)
    lines = []
    for idx in range(count):
        sample = generate_sample(height, width, rng_for(seed, "synth", idx))
        img_rel = f"images/{idx:06d}.png"
        edge_rel = f"edges/{idx:06d}.png"
        save_image(out / img_rel, sample.image)
        save_image(out / edge_rel, sample.gt_edges)
        lines.append(f"{idx}\t{img_rel}\t{edge_rel}\n")
    with open(out / "manifest.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(lines))
