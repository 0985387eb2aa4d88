"""Fusion of the two detection heads: BFS skeleton expansion plus averaging.

Object-head responses act as seeds; pixel-head responses above threshold act
as traversable candidates. An 8-connected breadth-first search keeps every
candidate reachable from a seed, preserving its pixel-head probability, and
the fused map averages that expansion with the object map before min-max
normalization.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .imaging import minmax_normalize

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1),
              (0, 1), (1, -1), (1, 0), (1, 1)]


def bfs_expand(o_pix, o_obj, pix_thr: float = 0.005,
               obj_thr: float = 0.005) -> np.ndarray:
    """Pixel-head values on candidates 8-connected to an object-head seed.

    Seeds are pixels with o_obj >= obj_thr, candidates pixels with
    o_pix >= pix_thr; unreached candidates and non-candidates map to 0.
    """
    o_pix = np.asarray(o_pix, dtype=np.float32)
    o_obj = np.asarray(o_obj, dtype=np.float32)
    if o_pix.shape != o_obj.shape or o_pix.ndim != 2:
        raise ValueError(
            f"bfs_expand: maps must share a 2-D shape, got {o_pix.shape} vs {o_obj.shape}")
    for name, thr in (("pix_thr", pix_thr), ("obj_thr", obj_thr)):
        if not 0 < thr < 1:
            raise ValueError(f"bfs_expand: {name} must lie in (0, 1), got {thr}")
    H, W = o_pix.shape
    candidate = o_pix >= pix_thr
    # every seed enters the queue, candidate or not: the object skeleton
    # ignites the expansion, but only candidates are traversed and kept
    visited = o_obj >= obj_thr
    queue = deque(map(tuple, np.argwhere(visited)))
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and candidate[nr, nc] \
                    and not visited[nr, nc]:
                visited[nr, nc] = True
                queue.append((nr, nc))
    out = np.zeros_like(o_pix)
    keep = visited & candidate
    out[keep] = o_pix[keep]
    return out


def fuse(o_pix, o_obj, pix_thr: float = 0.005, obj_thr: float = 0.005) -> np.ndarray:
    """minmax((expanded + o_obj) / 2); all-constant input stays all-zero."""
    expanded = bfs_expand(o_pix, o_obj, pix_thr, obj_thr)
    return minmax_normalize((expanded + np.asarray(o_obj, dtype=np.float32)) / 2.0)
