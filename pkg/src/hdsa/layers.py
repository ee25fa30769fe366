"""Trainable layers on top of the autodiff core.

Layers expose ``params()`` (trainable tensors) and ``buffers()`` (non-trained
state such as batch-norm running statistics) as flat name -> array dicts;
models compose these with dotted prefixes for checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rand import normal_box_muller


def prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


def uniform_fan_in(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in is the first axis."""
    limit = 1.0 / np.sqrt(shape[0])
    return ((rng.random(shape) * 2.0 - 1.0) * limit).astype(dtype)


class Dense:
    def __init__(self, d_in: int, d_out: int, rng, bias=True, dtype=np.float32):
        self.weight = Tensor(uniform_fan_in(rng, (d_in, d_out), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def buffers(self):
        return {}


class BatchNorm:
    """Per-feature normalization over all leading axes (batch and positions).

    Train mode normalizes by batch statistics and updates running stats with
    momentum 0.99; eval mode uses the running stats. Scale and shift are
    learnable per feature on the last axis.
    """

    def __init__(self, features: int, momentum=0.99, eps=1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(features, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype), requires_grad=True)
        self.running_mean = np.zeros(features, dtype)
        self.running_var = np.ones(features, dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        axes = tuple(range(x.data.ndim - 1))
        if training:
            mu = ad.mean(x, axis=axes, keepdims=True)
            xc = ad.sub(x, mu)
            var = ad.mean(ad.mul(xc, xc), axis=axes, keepdims=True)
            inv = ad.rsqrt(var + self.eps)
            xhat = ad.mul(xc, inv)
            m = self.momentum
            self.running_mean = (m * self.running_mean
                                 + (1.0 - m) * mu.data.reshape(-1)).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var
                                + (1.0 - m) * var.data.reshape(-1)).astype(self.running_var.dtype)
        else:
            inv_np = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = ad.mul(x - Tensor(self.running_mean), Tensor(inv_np.astype(x.dtype)))
        return ad.add(ad.mul(xhat, self.gamma), self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffers(self, bufs: dict):
        self.running_mean = bufs["running_mean"].astype(self.running_mean.dtype)
        self.running_var = bufs["running_var"].astype(self.running_var.dtype)


class LayerNorm:
    """Normalization over the last axis with learnable scale and shift."""

    def __init__(self, features: int, eps=1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(features, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = ad.mean(x, axis=-1, keepdims=True)
        xc = ad.sub(x, mu)
        var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
        xhat = ad.mul(xc, ad.rsqrt(var + self.eps))
        return ad.add(ad.mul(xhat, self.gamma), self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {}


class Embedding:
    def __init__(self, vocab: int, dim: int, rng, dtype=np.float32):
        w = normal_box_muller(rng, (vocab, dim)) / np.sqrt(dim)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)

    def __call__(self, indices: np.ndarray) -> Tensor:
        return ad.embedding(self.weight, indices)

    def params(self):
        return {"weight": self.weight}

    def buffers(self):
        return {}


def sinusoidal_positions(n: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard fixed sine/cosine position table, shape (n, dim)."""
    pos = np.arange(n)[:, None].astype(np.float64)
    idx = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    """Additive mask (n, n): 0 on and below the diagonal, -1e9 above."""
    return np.triu(np.full((n, n), -1e9, dtype=dtype), k=1)


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    Queries come from ``q_in`` (d_model features), keys and values from
    ``kv_in`` (``kv_dim`` features, default d_model); an optional additive
    mask is applied to the score matrix before the softmax.
    """

    def __init__(self, d_model: int, n_heads: int, rng, kv_dim=None, dtype=np.float32):
        if d_model % n_heads:
            raise ValueError("d_model must divide evenly into heads")
        kv_dim = kv_dim if kv_dim is not None else d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Dense(d_model, d_model, rng, dtype=dtype)
        self.wk = Dense(kv_dim, d_model, rng, dtype=dtype)
        self.wv = Dense(kv_dim, d_model, rng, dtype=dtype)
        self.wo = Dense(d_model, d_model, rng, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return ad.transpose(ad.reshape(x, (b, t, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q = self._split(self.wq(q_in))                      # (B, H, T, dh)
        k = self._split(self.wk(kv_in))                     # (B, H, S, dh)
        v = self._split(self.wv(kv_in))
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.d_head))
        if mask is not None:
            scores = ad.add(scores, Tensor(mask))
        attn = ad.softmax_rows(scores)                      # (B, H, T, S)
        mixed = ad.matmul(attn, v)                          # (B, H, T, dh)
        b, _, t, _ = mixed.shape
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, self.n_heads * self.d_head))
        return self.wo(merged)

    def params(self):
        out = {}
        for name, lyr in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.update(prefixed(name, lyr.params()))
        return out

    def buffers(self):
        return {}
