"""Symbolic attention over bipolar hypervectors.

A head projects objects and its trainable symbols through one shared bipolar
projection, scores every object against its bundled pairwise contexts,
mixes object hypervectors by the softmaxed scores, and binds the result with
the symbol hypervectors. The multi-head encoder batch-norms each head,
sums heads, and mean-pools the hyperdimension back down to the feature dim.

Scores have two implementations that produce bit-identical floats:
an exact float path and a packed-word path using only AND + popcount
(enabled with score_mode="binarized", evaluation only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import hdc
from .autodiff import Tensor
from .layers import BatchNorm, MultiHeadAttention, prefixed
from .rand import normal_box_muller

SCORE_MODES = ("exact", "binarized")


@dataclass
class SymbolicAttentionConfig:
    """Architecture knobs for the symbolic attention encoder."""

    heads: int = 1
    hyper_dim: int = 1000
    feature_dim: int = 32
    max_positions: int = 2
    dropout: float = 0.0
    score_mode: str = "exact"
    ablation: bool = False

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.hyper_dim < self.feature_dim:
            raise ValueError("hyper_dim must be >= feature_dim")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"score_mode must be one of {SCORE_MODES}")

    def to_dict(self) -> dict:
        return {
            "heads": self.heads,
            "hyper_dim": self.hyper_dim,
            "feature_dim": self.feature_dim,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
            "score_mode": self.score_mode,
            "ablation": self.ablation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SymbolicAttentionConfig":
        return cls(**d)


def _require_bipolar_rows(h: np.ndarray):
    if not np.all(np.abs(h) == 1):
        raise ValueError("rows must be bipolar (+-1 entries)")


class ProjectionLayer:
    """Learnable bipolar projection shared by objects and symbols in a head.

    Real latent weights carry the training signal; the effective weights are
    their sign. The projection output is itself bipolarized, with the
    pre-sign activation scaled by 1/sqrt(in_dim) so typical activations sit
    inside the straight-through window (the scaling cannot change any sign).
    """

    def __init__(self, in_dim: int, out_dim: int, rng, dtype=np.float32):
        latent = normal_box_muller(rng, (in_dim, out_dim)) / np.sqrt(in_dim)
        self.latent = Tensor(latent.astype(dtype), requires_grad=True)
        self.latent.bipolar = True
        self.in_dim = in_dim
        self.out_dim = out_dim

    def effective_weights(self) -> np.ndarray:
        """The deployed +-1 weight matrix."""
        return np.where(self.latent.data >= 0, 1.0, -1.0).astype(self.latent.dtype)

    def __call__(self, x: Tensor) -> Tensor:
        wb = ad.sign_ste(self.latent)
        pre = ad.scale(ad.matmul(x, wb), 1.0 / np.sqrt(self.in_dim))
        return ad.sign_ste(pre)

    def params(self):
        return {"latent": self.latent}

    def buffers(self):
        return {}


class SymbolLibrary:
    """Per-head trainable symbols: one row of input-independent features per position."""

    def __init__(self, max_positions: int, feature_dim: int, rng, dtype=np.float32):
        sym = normal_box_muller(rng, (max_positions, feature_dim))
        self.symbols = Tensor(sym.astype(dtype), requires_grad=True)
        self.max_positions = max_positions

    def rows(self, n: int) -> Tensor:
        if n > self.max_positions:
            raise ValueError(f"sequence length {n} exceeds max positions {self.max_positions}")
        if n == self.max_positions:
            return self.symbols
        return ad.embedding(self.symbols, np.arange(n))

    def params(self):
        return {"symbols": self.symbols}

    def buffers(self):
        return {}


# ---------------------------------------------------------------------------
# attention scores


def bundled_context_scores(h: Tensor) -> Tensor:
    """Differentiable score matrix r_ij = cos(h_i, sign(h_i + h_j)).

    ``h`` is (B, N, D) bipolar. For bipolar entries the bundled context is
    c = (h_i + h_j + 1 - h_i*h_j) / 2 elementwise, which collapses the
    score to (D + <h_i, h_j> + sum(h_i) - sum(h_j)) / (2D): gram-matrix
    work instead of an (B, N, N, D) context tensor, with identical floats.

    The bundling sign uses the straight-through gradient; (h_i + h_j)/2
    always lies in [-1, 1] for bipolar inputs, so the gate is fully open
    and the surrogate derivative is 1/2 per operand.
    """
    hd = h.data
    _require_bipolar_rows(hd)
    b, n, d = hd.shape
    gram = hd @ hd.swapaxes(-1, -2)                      # (B, N, N), exact ints
    sums = hd.sum(axis=-1)                               # (B, N)
    scores = (d + gram + sums[:, :, None] - sums[:, None, :]) / hd.dtype.type(2 * d)

    def backward(g):
        # roles of h[k]: the query h_i (dot and context) and the partner h_j
        row_g = g.sum(axis=2)                            # (B, N)
        col_mix = g @ hd                                 # sum_j g_ij h_j
        row_mix = g.swapaxes(-1, -2) @ hd                # sum_i g_ij h_i per j
        as_hi_dot = 0.5 * (hd * row_g[:, :, None] + col_mix
                           + row_g[:, :, None] - hd * col_mix)
        as_hi_ctx = 0.5 * hd * row_g[:, :, None]
        as_hj_ctx = 0.5 * row_mix
        ad._accumulate(h, (as_hi_dot + as_hi_ctx + as_hj_ctx) / d, own=True)

    return ad._op(scores, (h,), backward)


def pairwise_cosine_scores(h: Tensor) -> Tensor:
    """Ablation score matrix r_ij = cos(h_i, h_j) = <h_i, h_j> / D."""
    _require_bipolar_rows(h.data)
    d = h.data.shape[-1]
    return ad.scale(ad.matmul(h, ad.transpose(h)), 1.0 / d)


def attention_scores(h: np.ndarray, mode: str = "exact", ablation: bool = False) -> np.ndarray:
    """Frozen-model score matrix in float64; both modes are bit-identical.

    ``h`` is (..., N, D) bipolar. mode="exact" evaluates the float cosine;
    mode="binarized" packs rows to 64-bit words and uses AND + popcount
    (bundling in the packed domain is a bitwise OR). Either way the result
    is the same integer numerator divided by D once, in float64.
    """
    h = np.asarray(h)
    _require_bipolar_rows(h)
    if mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {mode!r}")
    d = h.shape[-1]
    if mode == "binarized":
        words = hdc.pack_rows(h)
        rows_i = words[..., :, None, :]
        rows_j = words[..., None, :, :]
        other = rows_j if ablation else rows_i | rows_j  # packed bundling is bitwise OR
        return hdc.cosine_binarized_matrix(rows_i, other, d)
    h64 = h.astype(np.float64)
    if ablation:
        return hdc.cosine_matrix(h64)
    gram = h64 @ h64.swapaxes(-1, -2)
    sums = h64.sum(axis=-1)
    # exact integers throughout; dividing 2*<h_i, c_ij> by 2D rounds identically
    # to the packed path's <h_i, c_ij> / D
    return (d + gram + sums[..., :, None] - sums[..., None, :]) / (2.0 * d)


# ---------------------------------------------------------------------------
# attention head and encoder block


class SymbolicAttentionHead:
    """One head: shared projection, context scores, weighted mix, symbol binding."""

    def __init__(self, config: SymbolicAttentionConfig, rng):
        self.config = config
        self.proj = ProjectionLayer(config.feature_dim, config.hyper_dim, rng)
        self.library = SymbolLibrary(config.max_positions, config.feature_dim, rng)

    def symbol_hypervectors(self, n: int) -> Tensor:
        """Bipolar symbol hypervectors for the first n positions (input-independent)."""
        return self.proj(self.library.rows(n))

    def __call__(self, obj: Tensor, training: bool) -> Tensor:
        n = obj.data.shape[-2]
        if n > self.config.max_positions:
            raise ValueError(f"sequence length {n} exceeds max positions "
                             f"{self.config.max_positions}")
        hobj = self.proj(obj)
        hsym = self.symbol_hypervectors(n)
        if training:
            if self.config.score_mode == "binarized":
                raise ValueError("binarized score mode is inference-only")
            if self.config.ablation:
                r = pairwise_cosine_scores(hobj)
            else:
                r = bundled_context_scores(hobj)
        else:
            r64 = attention_scores(hobj.data, mode=self.config.score_mode,
                                   ablation=self.config.ablation)
            r = Tensor(r64.astype(hobj.dtype))
        mixed = ad.matmul(ad.softmax_rows(r), hobj)
        return ad.mul(mixed, hsym)

    def params(self):
        out = prefixed("proj", self.proj.params())
        out.update(prefixed("symbols", self.library.params()))
        return out

    def buffers(self):
        return {}


class SymbolicAttentionEncoder:
    """Multi-head block: per-head batch norm, head summation, mean pooling.

    Output shape matches the input (N, feature_dim); the pooled coordinates
    average disjoint windows of floor(hyper_dim / feature_dim) hyperdimensions.
    """

    def __init__(self, config: SymbolicAttentionConfig, rng):
        self.config = config
        self.heads = [SymbolicAttentionHead(config, rng) for _ in range(config.heads)]
        self.norms = [BatchNorm(config.hyper_dim) for _ in range(config.heads)]

    def __call__(self, obj: Tensor, training: bool) -> Tensor:
        acc = None
        for head, norm in zip(self.heads, self.norms):
            a = norm(head(obj, training), training)
            acc = a if acc is None else ad.add(acc, a)
        return ad.global_avg_pool(acc, self.config.feature_dim)

    def params(self):
        out = {}
        for i, (head, norm) in enumerate(zip(self.heads, self.norms)):
            out.update(prefixed(f"head{i}", head.params()))
            out.update(prefixed(f"norm{i}", norm.params()))
        return out

    def buffers(self):
        out = {}
        for i, norm in enumerate(self.norms):
            out.update(prefixed(f"norm{i}", norm.buffers()))
        return out

    def load_buffers(self, bufs: dict):
        for i, norm in enumerate(self.norms):
            norm.load_buffers({k.split(".", 1)[1]: v for k, v in bufs.items()
                               if k.startswith(f"norm{i}.")})


def self_attention(obj: Tensor, mha: MultiHeadAttention) -> Tensor:
    """Baseline transformer self-attention: Q, K and V all from the objects."""
    return mha(obj, obj)
