"""Dense float64 tensors with taped reverse-mode differentiation.

Everything runs in 64-bit floating point. Operations record themselves onto
the active :class:`Tape` (a thread-local stack), and :meth:`Tape.backward`
replays the records strictly in reverse execution order, so every tensor's
gradient is complete before any earlier operation consumes it.

Broadcasting is deliberately restricted: elementwise ops require exact shape
matches. The only broadcast products offered are the bias adds built into
``add_bias``/``conv2d`` and the single-channel mask product ``scale_channels``.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """Wrap an array (copied) as a trainable tensor."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


class Tape:
    """Execution-ordered record of differentiable operations.

    Used as a context manager around a forward pass; ``backward`` then drives
    reverse-mode differentiation. Ops executed while no tape is active are
    plain numpy computations with no gradient tracking.
    """

    def __init__(self):
        # each record: (output tensor, input tensors, pull function)
        # pull(out_grad) -> per-input gradient arrays (None where not needed)
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], pull: Callable) -> None:
        self._records.append((out, inputs, pull))

    def backward(self, root: Tensor) -> None:
        """Populate ``grad`` on every recorded tensor that ``root`` depends on.

        ``root`` must be scalar (shape product 1). Gradients accumulate into
        existing buffers, so leaf tensors keep sums across calls until reset.
        """
        if root.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        root.accumulate_grad(np.ones_like(root.data))
        for out, inputs, pull in reversed(self._records):
            if out.grad is None:
                continue
            grads = pull(out.grad)
            for t, g in zip(inputs, grads):
                if t.requires_grad and g is not None:
                    t.accumulate_grad(np.asarray(g, dtype=np.float64))

    def clear_grads(self) -> None:
        """Reset gradients of every tensor this tape has touched."""
        for out, inputs, _ in self._records:
            out.grad = None
            for t in inputs:
                t.grad = None


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], pull: Callable) -> Tensor:
    """Create an op output and record it on the active tape if appropriate."""
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(out, tuple(inputs), pull)
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} must match exactly")


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return apply_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-F bias vector to the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit input {x.shape}")
    f = b.shape[0]

    def pull(g):
        return g, g.reshape(-1, f).sum(axis=0)

    return apply_op(x.data + b.data, (x, b), pull)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return apply_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# smallest/largest doubles inside the open interval (0, 1); sigmoid output is
# clipped here so the (0,1) range contract survives saturation in float64
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_raw(x.data)
    return apply_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid_raw(v: np.ndarray) -> np.ndarray:
    # split by sign for overflow-free exp; clip keeps outputs strictly in (0,1)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return np.clip(out, _SIG_LO, _SIG_HI)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return apply_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, computed with max subtraction."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return apply_op(y, (x,), pull)


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return apply_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return apply_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of empty tensor list")
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def pull(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return apply_op(np.concatenate(datas, axis=axis), tuple(tensors), pull)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of empty tensor list")

    def pull(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return apply_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), pull)


def getitem(x: Tensor, idx) -> Tensor:
    """Basic slicing (slices/ints only); gradients scatter back into place."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    for i in idx:
        if not isinstance(i, (slice, int)):
            raise ShapeError("getitem supports basic slicing only (ints and slices)")
    shape = x.data.shape

    def pull(g):
        buf = np.zeros(shape)
        buf[idx] = g
        return (buf,)

    return apply_op(x.data[idx], (x,), pull)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def pull(g):
        return g @ b.data.T, a.data.T @ g

    return apply_op(a.data @ b.data, (a, b), pull)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add_bias(y, b) if b is not None else y


# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation), NCHW layout


def _same_pad(extent: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-extent // stride)  # ceil division
    total = max((out - 1) * stride + k - extent, 0)
    lo = total // 2
    return out, lo, total - lo  # odd padding puts the extra pixel low/right


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: str = "same",
) -> Tensor:
    """Strided 2-D cross-correlation of NCHW input with KCkhkw kernels.

    ``same`` padding is symmetric with the extra pixel on the bottom/right;
    output spatial size is ceil(extent / stride).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    k, ck, kh, kw = w.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ck}")
    sh, sw = int(stride[0]), int(stride[1])
    if sh < 1 or sw < 1:
        raise ShapeError("conv2d: stride components must be >= 1")
    if b is not None and b.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({k},)")

    if padding == "same":
        ho, pt, pb = _same_pad(h, kh, sh)
        wo, pl, pr = _same_pad(wd, kw, sw)
    elif padding == "valid":
        if kh > h or kw > wd:
            raise ShapeError("conv2d: kernel larger than input under valid padding")
        ho, pt, pb = (h - kh) // sh + 1, 0, 0
        wo, pl, pr = (wd - kw) // sw + 1, 0, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if kh > h + pt + pb or kw > wd + pl + pr:
        raise ShapeError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]

    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (n, ho, wo, k)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data[None, :, None, None]

    def pull(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        dcols = np.tensordot(g, w.data, axes=([1], [0]))  # (n, ho, wo, c, kh, kw)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += dcols[:, :, i, j]
        dx = dxp[:, :, pt : pt + h, pl : pl + wd]
        if b is not None:
            return dx, dw, db
        return dx, dw

    inputs = (x, w) if b is None else (x, w, b)
    return apply_op(out, inputs, pull)


def scale_channels(x: Tensor, m: Tensor) -> Tensor:
    """Broadcast product of an NCHW volume with a single-channel N1HW mask."""
    if x.ndim != 4 or m.ndim != 4:
        raise ShapeError("scale_channels expects 4-D tensors")
    n, c, h, w = x.shape
    if m.shape != (n, 1, h, w):
        raise ShapeError(f"scale_channels: mask shape {m.shape} != ({n}, 1, {h}, {w})")

    def pull(g):
        return g * m.data, (g * x.data).sum(axis=1, keepdims=True)

    return apply_op(x.data * m.data, (x, m), pull)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics owned by a normalization layer (not differentiated)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = float(momentum)
        self.eps = float(eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization of NCHW input with affine scale/shift.

    Training mode normalizes by batch statistics over (N, H, W) and updates the
    running estimates in place; evaluation mode uses the frozen running stats.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm: gamma/beta shape mismatch")
    axes = (0, 2, 3)
    eps = state.eps

    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        mom = state.momentum
        state.running_mean += mom * (m - state.running_mean)
        state.running_var += mom * (v - state.running_var)
    else:
        m = state.running_mean
        v = state.running_var

    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    count = x.shape[0] * x.shape[2] * x.shape[3]

    def pull(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (inv[None, :, None, None] / count) * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx, dgamma, dbeta

    return apply_op(out, (x, gamma, beta), pull)
