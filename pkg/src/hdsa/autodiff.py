"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A GradTape records every operation whose inputs are being tracked; replaying
the records in reverse accumulates gradients into the ``grad`` slot of each
tracked tensor. The recording order is a topological order of the forward
graph, so no explicit sort is needed on the way back.

One tape belongs to one thread. Operations executed with no active tape run
as plain numpy with negligible overhead, which is the evaluation path for
frozen models.
"""

from __future__ import annotations

import threading

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a non-finite value makes continuing meaningless."""


_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class GradTape:
    """Ordered record of executed ops with their backward closures."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a GradTape is already active in this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc):
        _LOCAL.tape = None
        return False

    def record(self, pull):
        self._records.append(pull)

    def backward(self, loss: "Tensor"):
        """Seed d(loss)/d(loss) = 1 and replay the tape in reverse.

        The tape is cleared afterwards; a fresh tape is expected per step.
        """
        if loss.data.size != 1:
            raise ValueError("backward root must be a scalar tensor")
        loss.grad = np.ones_like(loss.data)
        for pull in reversed(self._records):
            pull()
        self._records.clear()


class Tensor:
    """Dense real array plus a gradient slot.

    ``requires_grad`` marks leaves (parameters); tensors produced by ops
    inherit tracking whenever a tape is active and any input is tracked.
    """

    __slots__ = ("data", "grad", "requires_grad", "bipolar")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.bipolar = False  # set on latent weights whose deployed form is +-1

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray, own: bool = False):
    """Add g into t.grad.

    ``own=True`` promises that g is either freshly allocated by the caller
    or aliases a gradient buffer that is fully consumed (every use of it in
    the reverse sweep has already run), so it may be held without copying.
    Read-only arrays (broadcast views) are also held directly; the first
    in-place accumulation reallocates instead of mutating them.
    """
    if t.grad is None:
        if own or not g.flags.writeable:
            t.grad = g if g.dtype == t.data.dtype else g.astype(t.data.dtype)
        else:
            t.grad = np.array(g, dtype=t.data.dtype)
    elif t.grad.flags.writeable:
        t.grad += g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _op(out_data, inputs, backward) -> Tensor:
    """Wrap an op result; record ``backward(out_grad)`` if tracking applies."""
    tape = _active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        def pull():
            if out.grad is not None:
                backward(out.grad)
        tape.record(pull)
    return out


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g, a.shape)
        _accumulate(a, ga, own=True)
        gb = _unbroadcast(g, b.shape)
        if gb is g and a.grad is g:
            gb = g.copy()  # both sides would otherwise hold the same buffer
        _accumulate(b, gb, own=True)

    return _op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape), own=True)
        _accumulate(b, -_unbroadcast(g, b.shape), own=True)

    return _op(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _op(-a.data, (a,), lambda g: _accumulate(a, -g, own=True))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape), own=True)
        _accumulate(b, _unbroadcast(g * a.data, b.shape), own=True)

    return _op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    return _op(a.data * a.dtype.type(s), (a,),
               lambda g: _accumulate(a, g * a.dtype.type(s), own=True))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape), own=True)
        _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape), own=True)

    return _op(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse), own=True)  # view of a finished buffer

    return _op(a.data.transpose(axes), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape), own=True)  # view of a finished buffer

    return _op(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece, own=True)  # disjoint views of a finished buffer

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask, own=True)

    return _op(a.data * mask, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data), own=True)

    return _op(out_data, (a,), backward)


def rsqrt(a: Tensor) -> Tensor:
    """1 / sqrt(x), elementwise; inputs must be strictly positive."""
    out_data = 1.0 / np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * (-0.5) * out_data / a.data, own=True)

    return _op(out_data, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, out_data * (g - inner), own=True)

    return _op(out_data, (a,), backward)


def sign_ste(a: Tensor) -> Tensor:
    """Bipolar sign (ties to +1) with a clipped straight-through gradient.

    Forward emits +-1; backward passes the upstream gradient unchanged where
    |x| <= 1 and blocks it elsewhere.
    """
    one = a.dtype.type(1)
    out_data = np.where(a.data >= 0, one, -one)
    gate = np.abs(a.data) <= 1

    def backward(g):
        _accumulate(a, g * gate, own=True)

    return _op(out_data, (a,), backward)


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors.

    Identity when not training or when rate == 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _op(a.data, (a,), lambda g: _accumulate(a, g, own=True))
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)

    def backward(g):
        _accumulate(a, g * keep, own=True)

    return _op(a.data * keep, (a,), backward)


def global_avg_pool(a: Tensor, out_dim: int) -> Tensor:
    """Mean-pool the last axis D down to ``out_dim`` with window floor(D/out_dim).

    Coordinate j of the output averages input coordinates [j*k, (j+1)*k);
    any trailing D - k*out_dim coordinates are discarded.
    """
    d = a.data.shape[-1]
    if out_dim > d:
        raise ValueError(f"out_dim {out_dim} exceeds input dim {d}")
    k = d // out_dim
    used = k * out_dim
    lead = a.data.shape[:-1]
    out_data = a.data[..., :used].reshape(lead + (out_dim, k)).mean(axis=-1)

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[..., :used] = np.repeat(g / k, k, axis=-1)
        _accumulate(a, ga, own=True)

    return _op(out_data, (a,), backward)


def embedding(weights: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup into a (vocab, dim) table; gradient scatter-adds."""
    indices = np.asarray(indices)

    def backward(g):
        gw = np.zeros_like(weights.data)
        np.add.at(gw, indices, g)
        _accumulate(weights, gw, own=True)

    return _op(weights.data[indices], (weights,), backward)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class targets.

    ``logits`` has classes on the last axis; ``targets`` matches the leading
    shape. Computed via a stabilized log-softmax.
    """
    targets = np.asarray(targets)
    n_classes = logits.data.shape[-1]
    if targets.min() < 0 or targets.max() >= n_classes:
        raise ValueError("target index out of range")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - logsumexp
    flat_targets = targets.reshape(-1)
    picked = log_probs.reshape(-1, n_classes)[np.arange(flat_targets.size), flat_targets]
    count = flat_targets.size
    out_data = np.asarray(-picked.sum() / count, dtype=logits.dtype)

    def backward(g):
        probs = np.exp(log_probs)
        grad = probs.reshape(-1, n_classes)
        grad[np.arange(flat_targets.size), flat_targets] -= 1.0
        _accumulate(logits, (g * grad.reshape(logits.shape)) / count, own=True)

    return _op(out_data, (logits,), backward)


def binary_cross_entropy(prob: Tensor, targets: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Mean BCE of probabilities against {0,1} targets, clamped at ``clamp``."""
    targets = np.asarray(targets, dtype=prob.dtype)
    p = np.clip(prob.data, clamp, 1.0 - clamp)
    inside = np.abs(prob.data - p) == 0  # gradient blocked where clamping bit
    out_data = np.asarray(
        -(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)).mean(), dtype=prob.dtype
    )

    def backward(g):
        grad = (p - targets) / (p * (1.0 - p)) / p.size
        _accumulate(prob, g * grad * inside, own=True)

    return _op(out_data, (prob,), backward)
