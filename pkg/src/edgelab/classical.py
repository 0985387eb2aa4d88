"""Canny edge detection and L0 gradient smoothing.

Both operate on 2-D float images in [0,1] and return float32 rasters. The
L0 solver keeps a per-round energy trace so callers can audit descent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .imaging import gaussian_blur, minmax_normalize


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)


def _filter3(img, kernel):
    """3x3 cross-correlation with replicate padding."""
    p = np.pad(img, 1, mode="edge").astype(np.float64)
    out = np.zeros(img.shape, dtype=np.float64)
    H, W = img.shape
    for di in range(3):
        for dj in range(3):
            out += kernel[di, dj] * p[di:di + H, dj:dj + W]
    return out


def sobel_gradients(img):
    """(gx, gy, magnitude) from 3x3 Sobel kernels, y pointing down."""
    gx = _filter3(img, _SOBEL_X)
    gy = _filter3(img, _SOBEL_Y)
    return gx, gy, np.hypot(gx, gy)


def canny(img: np.ndarray, low: float, high: float) -> np.ndarray:
    """Classic Canny: smooth, Sobel, 4-direction NMS, hysteresis.

    Thresholds apply to the min-max normalized gradient magnitude. Output is
    a binary float32 map with 1-pixel-wide lines.
    """
    if not (0.0 <= low <= high <= 1.0):
        raise ValueError(f"canny: need 0 <= low <= high <= 1, got {low}, {high}")
    img = np.asarray(img, dtype=np.float32)
    smoothed = gaussian_blur(img, 1.0)
    gx, gy, mag = sobel_gradients(smoothed)
    mag = minmax_normalize(mag).astype(np.float64)

    # quantize gradient direction to one of 4 axes
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    dbin = np.zeros(mag.shape, dtype=np.int8)
    dbin[(angle >= 22.5) & (angle < 67.5)] = 1
    dbin[(angle >= 67.5) & (angle < 112.5)] = 2
    dbin[(angle >= 112.5) & (angle < 157.5)] = 3
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}

    H, W = mag.shape
    padded = np.zeros((H + 2, W + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = mag

    def shifted(di, dj):
        return padded[1 + di:1 + di + H, 1 + dj:1 + dj + W]

    # asymmetric tie handling: ties lose against +d and win against -d, so an
    # exact two-pixel plateau keeps exactly one of the two pixels
    keep = np.zeros((H, W), dtype=bool)
    for b, (di, dj) in offsets.items():
        sel = dbin == b
        ok = (mag >= shifted(di, dj)) & (mag > shifted(-di, -dj))
        keep |= sel & ok
    keep &= mag > 0

    strong = keep & (mag >= high)
    weak = keep & (mag >= low)

    out = np.zeros((H, W), dtype=bool)
    queue = deque(zip(*np.nonzero(strong)))
    out[strong] = True
    while queue:
        i, j = queue.popleft()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = i + di, j + dj
                if 0 <= ni < H and 0 <= nj < W and weak[ni, nj] and not out[ni, nj]:
                    out[ni, nj] = True
                    queue.append((ni, nj))
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# L0 gradient smoothing
# ---------------------------------------------------------------------------


def _grad_x(s):
    g = np.zeros_like(s)
    g[:, :-1] = s[:, 1:] - s[:, :-1]
    return g


def _grad_y(s):
    g = np.zeros_like(s)
    g[:-1, :] = s[1:, :] - s[:-1, :]
    return g


def _div_x(h):
    # adjoint of _grad_x (transpose of the forward-difference matrix)
    d = np.zeros_like(h)
    d[:, 0] = -h[:, 0]
    d[:, 1:-1] = h[:, :-2] - h[:, 1:-1]
    d[:, -1] = h[:, -2]
    return d


def _div_y(v):
    d = np.zeros_like(v)
    d[0, :] = -v[0, :]
    d[1:-1, :] = v[:-2, :] - v[1:-1, :]
    d[-1, :] = v[-2, :]
    return d


def _cg_solve(apply_a, b, x0, tol, maxiter):
    """Conjugate gradients for SPD apply_a; relative-residual stopping rule."""
    x = x0.copy()
    r = b - apply_a(x)
    p = r.copy()
    rs = float((r * r).sum())
    bnorm = float(np.sqrt((b * b).sum()))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    for it in range(maxiter):
        if np.sqrt(rs) <= tol * bnorm:
            return x, it
        ap = apply_a(p)
        alpha = rs / float((p * ap).sum())
        x += alpha * p
        r -= alpha * ap
        rs_new = float((r * r).sum())
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol * bnorm:
        return x, maxiter
    raise ConvergenceError(
        f"l0_smooth: conjugate gradient residual {np.sqrt(rs) / bnorm:.3e} "
        f"above tolerance {tol:.1e} after {maxiter} iterations")


@dataclass
class L0Round:
    """Energy bookkeeping for one half-quadratic round at fixed beta.

    All three objective values use this round's beta. ``j_start`` evaluates
    the carried-over (h, v) before the threshold step (None on the first
    round, which has no previous auxiliaries); ``j_threshold`` is taken right
    after the hard threshold re-picks (h, v); ``j_solve`` after the
    screened-Poisson solve updates S. The threshold step minimizes the
    objective over (h, v) and the solve minimizes it over S, so
    j_start >= j_threshold >= j_solve holds round by round.
    """

    beta: float
    count: int
    j_start: float | None
    j_threshold: float
    j_solve: float
    cg_iters: int


def _surrogate(s, img, h, v, lam, beta, count):
    data = float(((s - img) ** 2).sum())
    spring = float(((_grad_x(s) - h) ** 2 + (_grad_y(s) - v) ** 2).sum())
    return data + beta * spring + lam * count


def nonzero_gradient_count(img, tol=1e-4) -> int:
    """Pixels whose forward-difference gradient exceeds ``tol`` in either axis."""
    img = np.asarray(img, dtype=np.float64)
    return int(((np.abs(_grad_x(img)) > tol) | (np.abs(_grad_y(img)) > tol)).sum())


def l0_energy(s, img, lam, tol=1e-4) -> float:
    """Sum of squared deviation from ``img`` plus lam times gradient count."""
    s = np.asarray(s, dtype=np.float64)
    img = np.asarray(img, dtype=np.float64)
    return float(((s - img) ** 2).sum()) + lam * nonzero_gradient_count(s, tol)


def l0_smooth_trace(img: np.ndarray, lam: float, kappa: float = 2.0,
                    beta_max: float = 1e5, cg_tol: float = 1e-5,
                    cg_maxiter: int = 500):
    """L0 smoothing via half-quadratic splitting; returns (S, rounds).

    Alternates a per-pixel hard threshold on the gradient field with a
    screened-Poisson solve, annealing the coupling beta from 2*lam up to
    beta_max by factors of kappa. ``rounds`` is a list of L0Round records.
    """
    if lam <= 0:
        raise ValueError(f"l0_smooth: lambda must be positive, got {lam}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"l0_smooth: expected 2-D image, got shape {img.shape}")
    s = img.copy()
    beta = 2.0 * lam
    rounds = []
    prev_aux = None
    while beta <= beta_max:
        if prev_aux is None:
            j_start = None
        else:
            ph, pv, pcount = prev_aux
            j_start = _surrogate(s, img, ph, pv, lam, beta, pcount)

        gx = _grad_x(s)
        gy = _grad_y(s)
        keep = (gx * gx + gy * gy) > (lam / beta)
        h = np.where(keep, gx, 0.0)
        v = np.where(keep, gy, 0.0)
        count = int(keep.sum())
        j_thr = _surrogate(s, img, h, v, lam, beta, count)

        b = img + beta * (_div_x(h) + _div_y(v))

        def apply_a(x, beta=beta):
            return x + beta * (_div_x(_grad_x(x)) + _div_y(_grad_y(x)))

        s, iters = _cg_solve(apply_a, b, s, cg_tol, cg_maxiter)
        j_sol = _surrogate(s, img, h, v, lam, beta, count)
        rounds.append(L0Round(beta=beta, count=count, j_start=j_start,
                              j_threshold=j_thr, j_solve=j_sol, cg_iters=iters))
        prev_aux = (h, v, count)
        beta *= kappa
    return s, rounds


def l0_smooth(img: np.ndarray, lam: float, **kwargs) -> np.ndarray:
    """L0 gradient smoothing; see l0_smooth_trace for the solver loop."""
    s, _ = l0_smooth_trace(img, lam, **kwargs)
    return np.clip(s, 0.0, 1.0).astype(np.float32)
