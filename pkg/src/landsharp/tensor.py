"""Small dense-tensor engine with reverse-mode autodiff.

Values live in numpy arrays (float32 by default). Every op that touches a
tensor with ``requires_grad`` records a node holding its parents and a
closure mapping the output gradient to parent gradients. Reductions that
feed a loss (softmax cross-entropy, batchnorm statistics) accumulate in
float64 and run in a fixed order, so a given forward pass is bit-for-bit
reproducible.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when an op receives inputs with incompatible shapes."""


class GradError(RuntimeError):
    """Raised on an invalid call to :func:`backward`."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # arithmetic sugar for tests and small expressions
    def __add__(self, other):
        return add(self, _wrap(other, self.data.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.data.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.data.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _record(out_data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, "add", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, "mul", (a, b), bw)


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64))

    def bw(g):
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _record(out, "sum", (a,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, 0)

    def bw(g):
        return (g * mask,)

    return _record(out, "relu", (x,), bw)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along the last axis of ``x`` ([N, C] or [N, H, W, C])."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match channel dim of {x.shape}")
    out = x.data + b.data
    red = tuple(range(x.data.ndim - 1))

    def bw(g):
        return g, g.sum(axis=red)

    return _record(out, "bias_add", (x, b), bw)


# -------------------------------------------------------------------- linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape[1]} vs {b.shape[0]})")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, "matmul", (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight laid out [out, in] (one row per filter)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T

    def bw(g):
        return g @ weight.data, g.T @ x.data

    y = _record(out, "linear", (x, weight), bw)
    return bias_add(y, bias) if bias is not None else y


def _im2col_into(cols: np.ndarray, xp: np.ndarray, kh: int, kw: int, h: int, w: int):
    # xp: one padded sample [H+kh-1, W+kw-1, C]; cols: [H, W, kh*kw, C], ordered (dy, dx, c)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, dy * kw + dx, :] = xp[dy:dy + h, dx:dx + w, :]


def _conv_same(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """x [N, H, W, C] (*) weight [O, C, kh, kw] -> [N, H, W, O], zero 'same' padding.

    Narrow inputs (C < 8) go through a per-sample im2col + one gemm. Wider
    inputs use kh*kw shifted gemms straight on the flattened padded sample:
    in row-major [Hp*Wp, C] layout, tap (dy, dx) of output row r is input row
    r + dy*Wp + dx, so no patch matrix is materialized. Outputs are computed
    on the padded width and the pad columns cropped. Taps are accumulated in
    fixed (dy, dx) order.
    """
    n, h, w, c = x.shape
    o, _, kh, kw = weight.shape
    dt = x.dtype
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    out = np.empty((n, h, w, o), dtype=dt)
    if c < 8:
        k = kh * kw * c
        wmat_t = np.ascontiguousarray(weight.transpose(2, 3, 1, 0).reshape(k, o).astype(dt))
        cols = np.empty((h, w, kh * kw, c), dtype=dt)
        for i in range(n):
            _im2col_into(cols, xp[i], kh, kw, h, w)
            np.matmul(cols.reshape(h * w, k), wmat_t, out=out[i].reshape(h * w, o))
        return out
    wp = w + kw - 1
    rows = h * wp
    taps = np.ascontiguousarray(weight.transpose(2, 3, 1, 0).astype(dt))  # [kh, kw, C, O]
    acc = np.empty((rows, o), dtype=dt)
    tmp = np.empty((rows, o), dtype=dt)
    for i in range(n):
        xf = xp[i].reshape(-1, c)
        np.matmul(xf[:rows], taps[0, 0], out=acc)
        for dy in range(kh):
            for dx in range(kw):
                if dy == 0 and dx == 0:
                    continue
                src = xf[dy * wp + dx:dy * wp + dx + rows]
                m = src.shape[0]  # the last few rows only feed cropped pad columns
                np.matmul(src, taps[dy, dx], out=tmp[:m])
                acc[:m] += tmp[:m]
        out[i] = acc.reshape(h, wp, o)[:, :w]
    return out


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """dL/dweight [O, C, kh, kw], summed over samples in order with float64 accumulation."""
    n, h, w, c = x.shape
    o = g.shape[3]
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    wp = w + kw - 1
    rows = h * wp
    gfull = np.zeros((h, wp, o), dtype=g.dtype)
    gw = np.zeros((kh, kw, c, o), dtype=np.float64)
    for i in range(n):
        xf = xp[i].reshape(-1, c)
        gfull[:, :w] = g[i]
        gf = gfull.reshape(rows, o)
        for dy in range(kh):
            for dx in range(kw):
                src = xf[dy * wp + dx:dy * wp + dx + rows]
                m = src.shape[0]
                gw[dy, dx] += src.T @ gf[:m]
    return gw.astype(g.dtype).transpose(3, 2, 0, 1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    Activations are channels-last [N, H, W, C]; weight is [out, in, kh, kw],
    so filter j is ``weight[j]``. Work is done one sample at a time, so a
    sample's output does not depend on the batch it was computed in. The
    input gradient is the same-padded convolution of the output gradient with
    the flipped, channel-transposed kernel.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    o, ci, kh, kw = weight.shape
    if ci != x.shape[3]:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels but weight expects {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: same padding needs odd kernel sizes, got {kh}x{kw}")
    out = _conv_same(x.data, weight.data)

    def bw(g):
        g = np.ascontiguousarray(g, dtype=x.data.dtype)
        gx = None
        if x.requires_grad:
            gx = _conv_same(g, weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        return gx, np.ascontiguousarray(_conv_weight_grad(x.data, g, kh, kw))

    y = _record(out, "conv2d", (x, weight), bw)
    return bias_add(y, bias) if bias is not None else y


# ------------------------------------------------------------- normalization

_BLOCK = 1024


def _channel_sum(flat: np.ndarray) -> np.ndarray:
    """Column sums of [M, C] as float64.

    Rows are summed in blocks of 1024 by a BLAS ones-vector product and the
    block partials combined in float64, always in the same order.
    """
    m, c = flat.shape
    full = m - m % _BLOCK
    total = np.zeros(c, dtype=np.float64)
    if full:
        ones = np.ones(_BLOCK, dtype=flat.dtype)
        partial = np.matmul(ones, flat[:full].reshape(-1, _BLOCK, c))
        total += partial.sum(axis=0, dtype=np.float64)
    if full < m:
        total += np.ones(m - full, dtype=flat.dtype) @ flat[full:]
    return total


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization of channels-last [N, H, W, C] input.

    Training mode normalizes with batch statistics (see ``_channel_sum``)
    and updates ``running_mean`` / ``running_var`` in place with an
    exponential average (unbiased variance). Eval mode only reads them.
    """
    if x.data.ndim != 4 or gamma.shape != (x.shape[3],) or beta.shape != (x.shape[3],):
        raise ShapeError(f"batchnorm2d: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    dt = x.data.dtype
    c = x.shape[3]
    flat = x.data.reshape(-1, c)
    m = flat.shape[0]
    if training:
        mean = _channel_sum(flat) / m
        centered = flat - mean.astype(dt)
        var = _channel_sum(np.square(centered)) / m
        running_mean *= 1 - momentum
        running_mean += (momentum * mean).astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += (momentum * var * m / max(m - 1, 1)).astype(running_var.dtype)
        inv = (1.0 / np.sqrt(var + eps)).astype(dt)
        scale = gamma.data.astype(dt) * inv
        out = centered * scale
        out += beta.data.astype(dt)

        def bw(g):
            gf = g.reshape(-1, c)
            xhat = centered * inv
            gsum = _channel_sum(gf)
            gdot = _channel_sum(gf * xhat)
            xhat *= (gdot / m).astype(dt)
            gx = gf - (gsum / m).astype(dt)
            gx -= xhat
            gx *= scale
            return gx.reshape(x.shape), gdot.astype(dt), gsum.astype(dt)
    else:
        inv = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(dt)
        mu = running_mean.astype(dt)
        scale = gamma.data.astype(dt) * inv
        out = flat * scale
        out += beta.data.astype(dt) - mu * scale

        def bw(g):
            gf = g.reshape(-1, c)
            xhat = (flat - mu) * inv
            return ((gf * scale).reshape(x.shape), _channel_sum(gf * xhat).astype(dt),
                    _channel_sum(gf).astype(dt))

    return _record(out.reshape(x.shape), "batchnorm2d", (x, gamma, beta), bw)


# ------------------------------------------------------------------- pooling

def mean_pool2x2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2, on [N, H, W, C]; a trailing odd row/column is dropped."""
    if x.data.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"mean_pool2x2: need [N,H>=2,W>=2,C], got {x.shape}")
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    v = x.data[:, :2 * h2, :2 * w2, :]
    out = (v[:, 0::2, 0::2] + v[:, 0::2, 1::2] + v[:, 1::2, 0::2] + v[:, 1::2, 1::2]) * 0.25

    def bw(g):
        gx = np.zeros_like(x.data)
        q = g * 0.25
        for dy in (0, 1):
            for dx in (0, 1):
                gx[:, dy:2 * h2:2, dx:2 * w2:2, :] = q
        return (gx,)

    return _record(out.astype(x.data.dtype, copy=False), "mean_pool2x2", (x,), bw)


def global_pool(x: Tensor) -> Tensor:
    """Average over frequency (axis 1), then max + mean over time (axis 2) -> [N, C]."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_pool: need [N,H,W,C], got {x.shape}")
    n, h, w, c = x.shape
    fm = x.data.mean(axis=1)
    idx = fm.argmax(axis=1)
    out = np.take_along_axis(fm, idx[:, None, :], axis=1)[:, 0, :] + fm.mean(axis=1)

    def bw(g):
        gfm = np.broadcast_to((g / w)[:, None, :], (n, w, c)).copy()
        np.add.at(gfm, (np.arange(n)[:, None], idx, np.arange(c)[None, :]), g)
        return (np.broadcast_to((gfm / h)[:, None, :, :], x.shape).astype(x.data.dtype),)

    return _record(out.astype(x.data.dtype, copy=False), "global_pool", (x,), bw)


# ---------------------------------------------------------------------- loss

def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row softmax cross-entropy in float64 (no graph)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), labels]


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; the scalar result is float64."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {k}), got "
                         f"[{labels.min()}, {labels.max()}]")
    losses = per_sample_cross_entropy(logits.data, labels)
    out = np.asarray(np.add.reduce(losses) / losses.shape[0])

    def bw(g):
        z = logits.data.astype(np.float64)
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(p.shape[0]), labels] -= 1.0
        return ((p * (float(g) / p.shape[0])).astype(logits.data.dtype),)

    return _record(out, "softmax_cross_entropy", (logits,), bw)


# ---------------------------------------------------------------- dispatcher

OPS: dict[str, Callable] = {
    "matmul": matmul,
    "linear": linear,
    "conv2d": conv2d,
    "add": add,
    "bias": bias_add,
    "mul": mul,
    "sum": tsum,
    "relu": relu,
    "batchnorm2d": batchnorm2d,
    "mean_pool2x2": mean_pool2x2,
    "global_pool": global_pool,
    "softmax_cross_entropy": softmax_cross_entropy,
}


def forward_op(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Apply the op named ``kind`` to ``inputs`` with keyword ``attrs``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **(attrs or {}))


# ------------------------------------------------------------------ backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Gradients are accumulated into ``.grad`` of every leaf tensor with
    ``requires_grad`` (call ``zero_grad`` between steps to reset). Returns a
    mapping leaf -> accumulated gradient.
    """
    if loss.data.size != 1:
        raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradError("backward called on a tensor that is not part of a tracked graph")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return leaves
