"""Shaped float64 tensors with reverse-mode automatic differentiation.

Forward ops run on numpy arrays. While a Tape is active, each op appends a
backward closure to the tape; Tape.backward replays the closures in reverse
creation order (a valid reverse-topological order, since inputs always exist
before outputs) and accumulates gradients additively into Tensor.grad.
Without an active tape, ops are plain numpy forward passes.
"""

from __future__ import annotations

import numpy as np

# Finite-value guard on every op output. NaN/Inf anywhere is an internal
# error at this scale, so the check stays on by default.
CHECK_FINITE = True


class ShapeMismatch(ValueError):
    """Operands of an op have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A float64 array plus a gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Op records in creation order; backward walks them in reverse."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        assert _TAPE_STACK.pop() is self
        return False

    def backward(self, root: Tensor):
        """Propagate d(root)/d(everything) into .grad fields.

        root must be scalar-shaped; each node is visited exactly once and
        fan-out contributions are summed.
        """
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        _accum(root, np.ones_like(root.data))
        for out, back in reversed(self._nodes):
            if out.grad is not None:
                back(out.grad)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, back) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape._nodes.append((out, back))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data + b.data, "add")

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, back)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data - b.data, "sub")

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, back)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data * b.data, "mul")

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, back)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data / b.data, "div")

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, back)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    out = _make(a.data * s, "scale")

    def back(g):
        _accum(a, g * s)

    return _record(out, back)


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b) -> Tensor:
    """Matrix product; stacked operands contract over the last two axes.

    Leading (batch) dims must match exactly, no broadcasting there.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.data.shape[-1] != b.data.shape[-2] \
            or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = _make(a.data @ b.data, "matmul")

    def back(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, back)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    out = _make(np.transpose(a.data, axes), "transpose")
    inv = tuple(np.argsort(axes))

    def back(g):
        _accum(a, np.transpose(g, inv))

    return _record(out, back)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    orig = a.data.shape
    out = _make(a.data.reshape(shape), "reshape")

    def back(g):
        _accum(a, g.reshape(orig))

    return _record(out, back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), "concat")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _record(out, back)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = _make(np.stack([t.data for t in tensors], axis=axis), "stack")

    def back(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _record(out, back)


def slice_axis(a, axis: int, start: int, length: int) -> Tensor:
    a = _wrap(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(a.data[idx], "slice")

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _record(out, back)


def gather_rows(a, indices) -> Tensor:
    """Select rows (axis 0) by integer index; duplicates accumulate in backward."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.data.shape[0]} rows")
    out = _make(a.data[idx], "gather_rows")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _record(out, back)


# Token-id lookup is the same scatter/gather op.
embedding_gather = gather_rows


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    out = _make(y, "tanh")

    def back(g):
        _accum(a, g * (1.0 - y * y))

    return _record(out, back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Evaluate on the side that cannot overflow.
    pos = x >= 0
    y = np.empty_like(x)
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = _sigmoid(a.data)
    out = _make(y, "sigmoid")

    def back(g):
        _accum(a, g * y * (1.0 - y))

    return _record(out, back)


def relu(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.maximum(a.data, 0.0), "relu")

    def back(g):
        _accum(a, g * (a.data > 0.0))

    return _record(out, back)


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, "softmax")

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - inner))

    return _record(out, back)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    val = m + np.log(s)
    w = e / s  # softmax weights, reused in backward
    if not keepdims:
        val = np.squeeze(val, axis=axis)
    out = _make(val, "logsumexp")

    def back(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis=axis)
        _accum(a, g * w)

    return _record(out, back)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gain.data + bias.data, "layer_norm")
    n = x.data.shape[-1]

    def back(g):
        _accum(bias, _unbroadcast(g, bias.data.shape))
        _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        _accum(x, gx)

    return _record(out, back)


# ---------------------------------------------------------------------------
# reductions

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), "reduce_sum")

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _record(out, back)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# losses

def bce_with_logits(logits, labels) -> Tensor:
    """Summed binary cross-entropy, numerically stable in the logits.

    labels is a constant array of 0/1 (no gradient flows into it).
    """
    logits = _wrap(logits)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ShapeMismatch(f"bce_with_logits: logits {logits.data.shape} vs labels {y.shape}")
    x = logits.data
    val = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = _make(val.sum(), "bce_with_logits")

    def back(g):
        _accum(logits, g * (_sigmoid(x) - y))

    return _record(out, back)


def cross_entropy_from_logits(logits, targets) -> Tensor:
    """Summed softmax cross-entropy over the last axis; targets are class ids."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.intp)
    if t.shape != logits.data.shape[:-1]:
        raise ShapeMismatch(
            f"cross_entropy_from_logits: logits {logits.data.shape} vs targets {t.shape}")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    lse = m.squeeze(-1) + np.log(e.sum(axis=-1))
    picked = np.take_along_axis(x, t[..., None], axis=-1).squeeze(-1)
    out = _make((lse - picked).sum(), "cross_entropy_from_logits")
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        grad = p.copy()
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
        _accum(logits, g * (grad - onehot))

    return _record(out, back)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, params, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f is a zero-argument callable returning a scalar Tensor computed from
    the given parameter Tensors. Error per coordinate is
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|); the max over all coordinates
    of all params is returned.
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    with Tape() as tape:
        out = f()
        if out.data.size != 1:
            raise ValueError("grad_check: f must be scalar-valued")
        if not np.isfinite(out.data):
            raise NonFiniteError("grad_check: f is non-finite at the given point")
        tape.backward(out)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, gad in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = gad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g_ad = gflat[i]
            err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            worst = max(worst, err)
    return worst


def make_rng(seed: int) -> np.random.Generator:
    """All randomness in the package flows through PCG64 generators."""
    return np.random.Generator(np.random.PCG64(seed))
