"""Minimal dense-tensor engine with reverse-mode autodiff and Adam.

Tensors wrap row-major float numpy arrays (float32 by default, float64
supported for numerical checking). Every operation records its inputs and a
backward closure on a dynamic tape; ``backward`` on a scalar loss populates
``grad`` on every reachable tensor with ``requires_grad=True``.

Reductions (batch-norm statistics, cross-entropy) accumulate in float64
before casting back, which keeps float32 training stable at small scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"


def _tracking(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _make_node(data, parents, backward_fn):
    out = Tensor(data)
    if _tracking(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# Pass-local gradient store, active only inside backward(). Closures
# accumulate here; the totals are flushed into .grad once the pass ends, so
# a second backward over the same graph adds a fresh pass instead of
# double-counting through stale interior gradients.
_active_grads = None


def _accumulate(tensor, delta):
    if not tensor.requires_grad:
        return
    store = _active_grads
    if store is None:
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        tensor.grad += delta
        return
    key = id(tensor)
    buf = store.get(key)
    if buf is None:
        store[key] = np.array(delta, dtype=tensor.data.dtype, copy=True)
    else:
        buf += delta


def _sum_to_shape(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(grad.dtype, copy=False)


class Workspace:
    """Reusable scratch buffers for hot ops; one instance per network layer.

    Training repeats identical shapes every step, so reusing buffers avoids
    the page-fault cost of fresh large allocations. A workspace must not be
    shared between layers whose buffers are alive simultaneously, and a
    layer's backward must run before its next forward (the backward closure
    reads the im2col buffer filled at forward time).
    """

    def __init__(self):
        self._buffers = {}

    def get(self, key, shape, dtype):
        buf = self._buffers.get(key)
        if buf is None or buf.shape != tuple(shape) or buf.dtype != dtype:
            buf = np.empty(shape, dtype=dtype)
            self._buffers[key] = buf
        return buf


def _scratch(workspace, key, shape, dtype):
    if workspace is None:
        return np.empty(shape, dtype=dtype)
    return workspace.get(key, shape, dtype)


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward_fn(dy):
        _accumulate(a, _sum_to_shape(dy, a.shape))
        _accumulate(b, _sum_to_shape(dy, b.shape))

    return _make_node(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward_fn(dy):
        _accumulate(a, _sum_to_shape(dy * b.data, a.shape))
        _accumulate(b, _sum_to_shape(dy * a.data, b.shape))

    return _make_node(data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward_fn(dy):
        _accumulate(a, dy * np.asarray(c, dtype=dy.dtype))

    return _make_node(a.data * np.asarray(c, dtype=a.dtype), (a,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)

    def backward_fn(dy):
        _accumulate(a, np.broadcast_to(dy, a.shape).astype(a.dtype, copy=True))

    return _make_node(data, (a,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward_fn(dy):
        _accumulate(a, dy.reshape(a.shape))

    return _make_node(data, (a,), backward_fn)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward_fn(dy):
        _accumulate(a, np.ascontiguousarray(dy.transpose(inv)))

    return _make_node(data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    mask = a.data > 0

    def backward_fn(dy):
        _accumulate(a, dy * mask)

    return _make_node(data, (a,), backward_fn)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous channel slice a[:, start:stop] of an NCHW tensor."""
    if a.ndim != 4:
        raise ShapeError(f"slice_channels: input must be NCHW, got shape {a.shape}")
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(
            f"slice_channels: range [{start}, {stop}) invalid for {a.shape[1]} channels")
    data = np.ascontiguousarray(a.data[:, start:stop])

    def backward_fn(dy):
        g = np.zeros(a.shape, dtype=dy.dtype)
        g[:, start:stop] = dy
        _accumulate(a, g)

    return _make_node(data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0,
           workspace: Workspace | None = None) -> Tensor:
    """2-D cross-correlation over NCHW input with OIKK weights and O bias.

    Internally converts to NHWC, runs im2col + one BLAS gemm, and converts
    back; a ``workspace`` makes the scratch buffers persistent across calls.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be OIKK, got shape {w.shape}")
    B, C, H, W = x.shape
    O, I, K, K2 = w.shape
    if K != K2:
        raise ShapeError(f"conv2d: kernel must be square, got {K}x{K2}")
    if K % 2 != 1:
        raise ShapeError(f"conv2d: kernel size must be odd, got {K}")
    if I != C:
        raise ShapeError(f"conv2d: weight expects {I} input channels, input has {C}")
    if b.shape != (O,):
        raise ShapeError(f"conv2d: bias must have shape ({O},), got {b.shape}")
    if pad < 0 or stride < 1:
        raise ShapeError(f"conv2d: need pad >= 0 and stride >= 1, got {pad}, {stride}")
    if H + 2 * pad < K or W + 2 * pad < K:
        raise ShapeError(f"conv2d: kernel {K} exceeds padded input {H + 2*pad}x{W + 2*pad}")

    Ho = (H + 2 * pad - K) // stride + 1
    Wo = (W + 2 * pad - K) // stride + 1
    dt = x.dtype

    xt = _scratch(workspace, "xt", (B, H, W, C), dt)
    np.copyto(xt, x.data.transpose(0, 2, 3, 1))
    if pad > 0:
        xpad = _scratch(workspace, "xpad", (B, H + 2 * pad, W + 2 * pad, C), dt)
        xpad.fill(0.0)
        xpad[:, pad:pad + H, pad:pad + W, :] = xt
    else:
        xpad = xt

    if K == 1 and stride == 1:
        cols2 = xpad.reshape(B * Ho * Wo, C)
    else:
        cols = _scratch(workspace, "cols", (B, Ho, Wo, K, K, C), dt)
        for ki in range(K):
            for kj in range(K):
                cols[:, :, :, ki, kj, :] = xpad[:, ki:ki + stride * Ho:stride,
                                                kj:kj + stride * Wo:stride, :]
        cols2 = cols.reshape(B * Ho * Wo, K * K * C)

    w2 = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0)).reshape(K * K * C, O)
    yl = _scratch(workspace, "yl", (B * Ho * Wo, O), dt)
    np.matmul(cols2, w2, out=yl)
    yl += b.data
    y = np.ascontiguousarray(yl.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward_fn(dy):
        dyl = _scratch(workspace, "dyl", (B * Ho * Wo, O), dt)
        np.copyto(dyl, dy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O))
        if b.requires_grad:
            _accumulate(b, dyl.sum(axis=0, dtype=np.float64).astype(dt))
        if w.requires_grad:
            dw2 = cols2.T @ dyl
            _accumulate(w, dw2.reshape(K, K, C, O).transpose(3, 2, 0, 1))
        if x.requires_grad:
            dcols2 = _scratch(workspace, "dcols", (B * Ho * Wo, K * K * C), dt)
            np.matmul(dyl, w2.T, out=dcols2)
            dxpad = _scratch(workspace, "dxpad", xpad.shape, dt)
            dxpad.fill(0.0)
            if K == 1 and stride == 1:
                dxpad += dcols2.reshape(xpad.shape)
            else:
                dcols = dcols2.reshape(B, Ho, Wo, K, K, C)
                for ki in range(K):
                    for kj in range(K):
                        dxpad[:, ki:ki + stride * Ho:stride,
                              kj:kj + stride * Wo:stride, :] += dcols[:, :, :, ki, kj, :]
            if pad > 0:
                dxt = dxpad[:, pad:pad + H, pad:pad + W, :]
            else:
                dxt = dxpad
            _accumulate(x, np.ascontiguousarray(dxt.transpose(0, 3, 1, 2)))

    return _make_node(y, (x, w, b), backward_fn)


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; spatial dims must be even."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2x2: input must be NCHW, got shape {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2x2: spatial dims must be even, got {H}x{W}")
    blocks = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = np.ascontiguousarray(blocks).reshape(B, C, H // 2, W // 2, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward_fn(dy):
        dblocks = np.zeros((B, C, H // 2, W // 2, 4), dtype=x.dtype)
        np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=-1)
        dx = dblocks.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        _accumulate(x, np.ascontiguousarray(dx).reshape(B, C, H, W))

    return _make_node(y, (x,), backward_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormStats:
    """Running statistics for one batch-norm layer (non-trainable buffers)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        return cls(mean=np.zeros(channels, dtype=dtype),
                   var=np.ones(channels, dtype=dtype),
                   momentum=momentum, eps=eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats,
               training: bool) -> Tensor:
    """Per-channel batch normalization over NCHW input.

    Training mode normalizes by batch statistics and updates the running
    buffers in ``stats``; eval mode normalizes by the running buffers.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: input must be NCHW, got shape {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(
            f"batch_norm: gamma/beta must have shape ({C},), got {gamma.shape}, {beta.shape}")
    dt = x.dtype
    eps = stats.eps
    n = B * H * W

    if training:
        mean64 = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var64 = np.square(x.data.astype(np.float64) -
                          mean64[None, :, None, None]).mean(axis=(0, 2, 3))
        mean = mean64.astype(dt)
        var = var64.astype(dt)
        m = stats.momentum
        unbiased = var * (n / max(n - 1, 1))
        stats.mean *= (1.0 - m)
        stats.mean += m * mean.astype(stats.mean.dtype)
        stats.var *= (1.0 - m)
        stats.var += m * unbiased.astype(stats.var.dtype)
    else:
        mean = stats.mean.astype(dt)
        var = stats.var.astype(dt)

    invstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=dt))
    xhat = (x.data - mean[None, :, None, None]) * invstd[None, :, None, None]
    y = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward_fn(dy):
        if gamma.requires_grad:
            _accumulate(gamma, (dy * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(dt))
        if beta.requires_grad:
            _accumulate(beta, dy.sum(axis=(0, 2, 3), dtype=np.float64).astype(dt))
        if not x.requires_grad:
            return
        g = gamma.data[None, :, None, None]
        if training:
            sum_dy = dy.sum(axis=(0, 2, 3), dtype=np.float64).astype(dt)
            sum_dy_xhat = (dy * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(dt)
            dx = (g * invstd[None, :, None, None] / n) * (
                n * dy
                - sum_dy[None, :, None, None]
                - xhat * sum_dy_xhat[None, :, None, None])
        else:
            dx = dy * g * invstd[None, :, None, None]
        _accumulate(x, dx.astype(dt, copy=False))

    return _make_node(y.astype(dt, copy=False), (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# softmax / attention / cross-entropy
# ---------------------------------------------------------------------------


def softmax_channel(x: Tensor) -> Tensor:
    """Numerically-stabilized softmax along the channel axis of NCHW input."""
    if x.ndim != 4:
        raise ShapeError(f"softmax_channel: input must be NCHW, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward_fn(dy):
        dot = (dy * s).sum(axis=1, keepdims=True)
        _accumulate(x, s * (dy - dot))

    return _make_node(s.astype(x.dtype, copy=False), (x,), backward_fn)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over (batch, positions, channels) inputs."""
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("scaled_dot_attention: q, k, v must be (B, L, d)")
    B, L, d = q.shape
    if k.shape[0] != B or v.shape[0] != B:
        raise ShapeError(f"scaled_dot_attention: batch mismatch {q.shape} {k.shape} {v.shape}")
    if k.shape[1] != L or v.shape[1] != L:
        raise ShapeError(
            f"scaled_dot_attention: position-count mismatch {q.shape} {k.shape} {v.shape}")
    if k.shape[2] != d:
        raise ShapeError(f"scaled_dot_attention: q has {d} channels, k has {k.shape[2]}")
    dt = q.dtype
    inv_sqrt_d = np.asarray(1.0 / np.sqrt(d), dtype=dt)

    scores = np.matmul(q.data, k.data.transpose(0, 2, 1)) * inv_sqrt_d
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    y = np.matmul(attn, v.data)

    def backward_fn(dy):
        if v.requires_grad:
            _accumulate(v, np.matmul(attn.transpose(0, 2, 1), dy))
        if q.requires_grad or k.requires_grad:
            dattn = np.matmul(dy, v.data.transpose(0, 2, 1))
            dot = (dattn * attn).sum(axis=-1, keepdims=True)
            dscores = attn * (dattn - dot) * inv_sqrt_d
            if q.requires_grad:
                _accumulate(q, np.matmul(dscores, k.data))
            if k.requires_grad:
                _accumulate(k, np.matmul(dscores.transpose(0, 2, 1), q.data))

    return _make_node(y.astype(dt, copy=False), (q, k, v), backward_fn)


def cross_entropy_cell(logits: Tensor, labels: np.ndarray, weights) -> Tensor:
    """Weighted sum of per-cell cross-entropies over a (B, C, Hc, Wc) grid.

    ``labels`` holds class indices in 0..C-1 per cell; ``weights`` is a scalar
    or array broadcastable to (B, Hc, Wc). Returns the scalar
    sum(weight * -log softmax(logits)[label]).
    """
    if logits.ndim != 4:
        raise ShapeError(f"cross_entropy_cell: logits must be (B, C, Hc, Wc), got {logits.shape}")
    B, C, Hc, Wc = logits.shape
    labels = np.asarray(labels)
    if labels.shape == (Hc, Wc):
        labels = np.broadcast_to(labels, (B, Hc, Wc))
    if labels.shape != (B, Hc, Wc):
        raise ShapeError(
            f"cross_entropy_cell: labels shape {labels.shape} does not match grid {(B, Hc, Wc)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError("cross_entropy_cell: labels must be integers")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(
            f"cross_entropy_cell: labels must lie in 0..{C - 1}, got range "
            f"[{labels.min()}, {labels.max()}]")
    w = np.broadcast_to(np.asarray(weights, dtype=logits.dtype), (B, Hc, Wc))
    if np.any(w < 0):
        raise ValueError("cross_entropy_cell: weights must be nonnegative")

    dt = logits.dtype
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True, dtype=np.float64)
    log_probs = shifted - np.log(denom).astype(dt)
    picked = np.take_along_axis(log_probs, labels[:, None, :, :], axis=1)[:, 0]
    loss = np.asarray(-(w.astype(np.float64) * picked.astype(np.float64)).sum(), dtype=dt)

    def backward_fn(dy):
        # d loss / d logit = w * (softmax - onehot)
        grad = (e / denom).astype(dt) * w[:, None, :, :]
        idx = labels[:, None, :, :]
        np.put_along_axis(
            grad, idx,
            np.take_along_axis(grad, idx, axis=1) - w[:, None, :, :], axis=1)
        _accumulate(logits, grad * dy)

    return _make_node(loss, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    Gradients accumulate into ``.grad``; call ``zero_grad`` on parameters
    between steps. The loss must be scalar.
    """
    global _active_grads
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative post-order DFS over the requires_grad subgraph
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    _active_grads = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(topo):
            dy = _active_grads.get(id(node))
            if dy is None or node._backward is None:
                continue
            node._backward(dy)
        for node in topo:
            delta = _active_grads.get(id(node))
            if delta is None:
                continue
            if node.grad is None:
                node.grad = delta
            else:
                node.grad += delta
    finally:
        _active_grads = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam optimizer state: step count plus per-parameter moment buffers."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def create(cls, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, state: AdamState, grads: dict | None = None) -> None:
    """One bias-corrected Adam update; grads are read, never modified."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
