"""Dual-head edge network: shared VGG-style encoder, pixel and object decoders.

The encoder downsamples by 8; both decoders emit a 65-channel grid where each
cell covers an 8x8 patch (64 in-patch positions plus a "no edge" class at
index 64). The object decoder adds one self-attention layer over cell
positions before its output projection.

Cell labels are 0-based: raster position ``8*dr + dc`` inside the patch, 64
for patches without edge pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    AdamState,
    BatchNormStats,
    ShapeError,
    Tensor,
    Workspace,
    adam_step,
    add,
    backward,
    batch_norm,
    conv2d,
    cross_entropy_cell,
    max_pool2x2,
    no_grad,
    permute,
    relu,
    reshape,
    scale,
    scaled_dot_attention,
    slice_channels,
)

DUSTBIN = 64

# name, in_channels, out_channels, kernel, has_bn
_CONV_PLAN = (
    ("enc1a", 1, 64, 3, True),
    ("enc1b", 64, 64, 3, True),
    ("enc2a", 64, 64, 3, True),
    ("enc2b", 64, 64, 3, True),
    ("enc3a", 64, 128, 3, True),
    ("enc3b", 128, 128, 3, True),
    ("enc4a", 128, 128, 3, True),
    ("enc4b", 128, 128, 3, True),
    ("pix1", 128, 256, 3, True),
    ("pix2", 256, 65, 1, True),
    ("obj1", 128, 256, 3, True),
    ("obj2", 256, 195, 1, True),
    ("objp", 65, 65, 1, False),
)


@dataclass
class LossConfig:
    """Positive/negative balance for the object-head loss; lam must be > 0."""

    lam: float = 1.1

    def validate(self):
        if not self.lam > 0:
            raise ValueError(f"LossConfig: lam must be positive, got {self.lam}")
        return self


@dataclass
class ModelParams:
    """Trainable tensors plus batch-norm running buffers, keyed by layer.

    ``workspaces`` holds per-layer conv scratch; it is never serialized.
    """

    params: dict
    stats: dict
    workspaces: dict = field(default_factory=dict)

    @classmethod
    def create(cls, rng: np.random.Generator) -> "ModelParams":
        """He-initialized weights, zero biases, unit-gamma batch norm."""
        params = {}
        stats = {}
        for name, cin, cout, k, has_bn in _CONV_PLAN:
            std = np.sqrt(2.0 / (cin * k * k))
            w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(np.float32)
            params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
            params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=np.float32),
                                         requires_grad=True, name=f"{name}.b")
            if has_bn:
                params[f"{name}.gamma"] = Tensor(np.ones(cout, dtype=np.float32),
                                                 requires_grad=True,
                                                 name=f"{name}.gamma")
                params[f"{name}.beta"] = Tensor(np.zeros(cout, dtype=np.float32),
                                                requires_grad=True,
                                                name=f"{name}.beta")
                stats[name] = BatchNormStats.create(cout)
        return cls(params=params, stats=stats)

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()


def _layer(x, name, mp: ModelParams, training: bool, activate: bool):
    w = mp.params[f"{name}.w"]
    pad = (w.shape[2] - 1) // 2
    ws = mp.workspaces.setdefault(name, Workspace())
    y = conv2d(x, w, mp.params[f"{name}.b"], stride=1, pad=pad, workspace=ws)
    if name in mp.stats:
        y = batch_norm(y, mp.params[f"{name}.gamma"], mp.params[f"{name}.beta"],
                       mp.stats[name], training)
    return relu(y) if activate else y


def forward(images, mp: ModelParams, training: bool):
    """(B, H, W) grayscale batch -> (pixel_logits, object_logits), each
    (B, 65, H/8, W/8). H and W must be divisible by 8."""
    if isinstance(images, Tensor):
        x = images
    else:
        x = Tensor(np.asarray(images, dtype=np.float32))
    if x.ndim == 3:
        B, H, W = x.shape
        x = reshape(x, (B, 1, H, W))
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"forward: expected (B, H, W) grayscale batch, got {x.shape}")
    B, _, H, W = x.shape
    if H % 8 or W % 8:
        raise ShapeError(f"forward: dims must be divisible by 8, got {H}x{W}")

    x = _layer(x, "enc1a", mp, training, True)
    x = max_pool2x2(_layer(x, "enc1b", mp, training, True))
    x = _layer(x, "enc2a", mp, training, True)
    x = max_pool2x2(_layer(x, "enc2b", mp, training, True))
    x = _layer(x, "enc3a", mp, training, True)
    x = max_pool2x2(_layer(x, "enc3b", mp, training, True))
    x = _layer(x, "enc4a", mp, training, True)
    x = _layer(x, "enc4b", mp, training, True)

    h = _layer(x, "pix1", mp, training, True)
    pixel_logits = _layer(h, "pix2", mp, training, False)

    h = _layer(x, "obj1", mp, training, True)
    qkv = _layer(h, "obj2", mp, training, False)
    Hc, Wc = qkv.shape[2], qkv.shape[3]
    L = Hc * Wc

    def heads(lo, hi):
        part = reshape(slice_channels(qkv, lo, hi), (B, 65, L))
        return permute(part, (0, 2, 1))

    attn = scaled_dot_attention(heads(0, 65), heads(65, 130), heads(130, 195))
    attn = reshape(permute(attn, (0, 2, 1)), (B, 65, Hc, Wc))
    object_logits = _layer(attn, "objp", mp, training, False)
    return pixel_logits, object_logits


# ---------------------------------------------------------------------------
# cell encoding
# ---------------------------------------------------------------------------


def edgemap_to_cells(binary: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Binary (H, W) map -> (H/8, W/8) int labels.

    Cells without edge pixels get 64; cells with several get a uniformly
    random one via ``rng`` (a fixed-size draw, so consumption is
    shape-deterministic).
    """
    binary = np.asarray(binary)
    H, W = binary.shape
    if H % 8 or W % 8:
        raise ShapeError(f"edgemap_to_cells: dims must be divisible by 8, got {H}x{W}")
    Hc, Wc = H // 8, W // 8
    patches = (binary > 0.5).reshape(Hc, 8, Wc, 8).transpose(0, 2, 1, 3)
    flat = patches.reshape(Hc, Wc, 64)
    noise = rng.random(size=(Hc, Wc, 64))
    labels = np.argmax(flat * (1.0 + noise), axis=2).astype(np.int64)
    labels[~flat.any(axis=2)] = DUSTBIN
    return labels


def cells_to_edgemap(logits) -> np.ndarray:
    """(B, 65, H/8, W/8) logits -> (B, H, W) edge probabilities.

    Channel softmax, dustbin dropped, then depth-to-space: channel k of cell
    (h, w) lands on pixel (8h + k//8, 8w + k%8).
    """
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 4 or data.shape[1] != 65:
        raise ShapeError(f"cells_to_edgemap: expected (B, 65, Hc, Wc), got {data.shape}")
    B, _, Hc, Wc = data.shape
    shifted = data - data.max(axis=1, keepdims=True)
    e = np.exp(shifted, dtype=np.float64)
    probs = (e / e.sum(axis=1, keepdims=True))[:, :DUSTBIN]
    out = probs.reshape(B, 8, 8, Hc, Wc).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(out.reshape(B, Hc * 8, Wc * 8)).astype(np.float32)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _batched_labels(labels, B, Hc, Wc):
    labels = np.asarray(labels)
    if labels.shape == (Hc, Wc):
        labels = np.broadcast_to(labels, (B, Hc, Wc))
    if labels.shape != (B, Hc, Wc):
        raise ShapeError(f"labels shape {labels.shape} does not match grid {(B, Hc, Wc)}")
    return labels


def loss_pix(pixel_logits: Tensor, labels) -> Tensor:
    """Mean per-cell cross-entropy, batch-averaged: 64/(H*W) per image."""
    B, _, Hc, Wc = pixel_logits.shape
    weight = 1.0 / (Hc * Wc * B)
    return cross_entropy_cell(pixel_logits, _batched_labels(labels, B, Hc, Wc),
                              weight)


def loss_obj(object_logits: Tensor, labels, pseudo_gt, cfg: LossConfig) -> Tensor:
    """Class-balanced cross-entropy, batch-averaged.

    Per image, with |Y+| edge and |Y-| non-edge pixels in its pseudo ground
    truth: dustbin cells weigh lam*|Y+|/(|Y+|+|Y-|), edge cells
    |Y-|/(|Y+|+|Y-|). An empty pseudo map therefore zeroes the loss.
    """
    cfg.validate()
    B, _, Hc, Wc = object_logits.shape
    labels = _batched_labels(labels, B, Hc, Wc)
    pseudo = np.asarray(pseudo_gt)
    if pseudo.ndim == 2:
        pseudo = pseudo[None]
    if pseudo.shape != (B, Hc * 8, Wc * 8):
        raise ShapeError(
            f"loss_obj: pseudo_gt shape {pseudo.shape} does not match {(B, Hc * 8, Wc * 8)}")
    edges = pseudo > 0.5
    npos = edges.sum(axis=(1, 2)).astype(np.float64)
    total = float(pseudo.shape[1] * pseudo.shape[2])
    alpha = cfg.lam * npos / total
    beta = (total - npos) / total
    weights = np.where(labels == DUSTBIN, alpha[:, None, None], beta[:, None, None])
    empty = npos == 0
    if empty.any():
        # no positives: alpha = 0 already kills dustbin cells, and any stray
        # edge-labeled cell would be inconsistent with its own pseudo map
        weights = np.where(empty[:, None, None] & (labels != DUSTBIN), 0.0, weights)
    return scale(cross_entropy_cell(object_logits, labels,
                                    weights.astype(object_logits.dtype)), 1.0 / B)


def loss_total(l_pix: Tensor, l_obj: Tensor) -> Tensor:
    return add(l_pix, l_obj)


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


def train_step(images, pixel_labels, object_labels, pseudo_gt,
               mp: ModelParams, adam: AdamState, cfg: LossConfig):
    """One optimization step; returns detached (l_pix, l_obj) floats."""
    pl, ol = forward(images, mp, training=True)
    lp = loss_pix(pl, pixel_labels)
    lo = loss_obj(ol, object_labels, pseudo_gt, cfg)
    lt = loss_total(lp, lo)
    lp_val, lo_val = float(lp.item()), float(lo.item())
    if not np.isfinite(lp_val + lo_val):
        raise FloatingPointError(
            f"train_step: non-finite loss (pix={lp_val}, obj={lo_val})")
    backward(lt)
    adam_step(mp.params, adam)
    mp.zero_grads()
    return lp_val, lo_val


def predict(img: np.ndarray, mp: ModelParams):
    """(H, W) image -> (o_pix, o_obj) probability maps of the same shape.

    Replicate-pads to multiples of 8, runs an eval-mode forward, crops back.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ShapeError(f"predict: expected a single (H, W) image, got {img.shape}")
    H, W = img.shape
    ph, pw = (-H) % 8, (-W) % 8
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    with no_grad():
        pl, ol = forward(padded[None], mp, training=False)
    o_pix = cells_to_edgemap(pl)[0, :H, :W]
    o_obj = cells_to_edgemap(ol)[0, :H, :W]
    return o_pix, o_obj
