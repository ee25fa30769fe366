"""Bipolar hypervector arithmetic and its packed-binary twin.

Hypervectors are dense 1-D numpy arrays with entries in {-1, +1}. The same
information can be carried as packed 64-bit words under the bipolar-to-binary
map b = (h + 1) / 2, and every similarity score computable on the bipolar
side has an integer-only counterpart on the packed side (AND + popcount plus
a final affine correction). Both paths produce bit-identical floats.

All functions here are pure; none mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORD_BITS = 64
_WORD_DTYPE = np.dtype("<u8")


def _require_bipolar(h: np.ndarray, name: str = "hypervector") -> np.ndarray:
    h = np.asarray(h)
    if h.ndim == 0:
        raise ValueError(f"{name} must be at least 1-D")
    if not np.all(np.abs(h) == 1):
        raise ValueError(f"{name} entries must all be -1 or +1")
    return h


def _require_same_dims(a: np.ndarray, b: np.ndarray) -> int:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a.shape[-1]


def sign_bipolarize(x: np.ndarray) -> np.ndarray:
    """Map a real vector to {-1, +1} elementwise; zeros resolve to +1.

    The +1 tie rule keeps the output bipolar and reproducible.
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return np.where(x >= 0, dtype.type(1), dtype.type(-1))


def bundle(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Superposition: elementwise sign of the sum, ties to +1.

    Acts as a coordinate-wise majority of the two inputs; the result stays
    similar to both.
    """
    h1 = _require_bipolar(h1, "h1")
    h2 = _require_bipolar(h2, "h2")
    _require_same_dims(h1, h2)
    return sign_bipolarize(h1 + h2)


def bind(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Pairing: elementwise product. Self-inverse, commutative, associative."""
    h1 = _require_bipolar(h1, "h1")
    h2 = _require_bipolar(h2, "h2")
    _require_same_dims(h1, h2)
    return h1 * h2


def cosine(h1: np.ndarray, h2: np.ndarray) -> float:
    """Cosine similarity of two bipolar vectors: <h1, h2> / D.

    Bipolar vectors have L2 norm sqrt(D), so no norms need computing. The
    dot product of +-1 entries is an exact integer; the single float64
    division makes this bit-comparable with the packed-word path.
    """
    h1 = _require_bipolar(h1, "h1")
    h2 = _require_bipolar(h2, "h2")
    d = _require_same_dims(h1, h2)
    s = float(np.dot(h1.astype(np.float64), h2.astype(np.float64)))
    return s / d


def context_similarity(h1: np.ndarray, h2: np.ndarray) -> float:
    """Similarity of h1 against the bundled context h1 (+) h2.

    Scores the first argument against the superposition of both instead of
    directly against the second; for independent random inputs this
    concentrates near 0.5 rather than 0.
    """
    return cosine(h1, bundle(h1, h2))


@dataclass(frozen=True)
class PackedBits:
    """Bit-packed image of a bipolar hypervector.

    Bit i of the stream (word i // 64, bit position i % 64, little-endian)
    holds (h[i] + 1) / 2. Padding bits past ``dims`` are zero.
    """

    dims: int
    words: np.ndarray

    def __post_init__(self):
        if self.dims <= 0:
            raise ValueError("dims must be positive")
        words = np.ascontiguousarray(self.words, dtype=_WORD_DTYPE)
        expected = n_words(self.dims)
        if words.shape != (expected,):
            raise ValueError(f"expected {expected} words for dims={self.dims}, got {words.shape}")
        tail = self.dims % WORD_BITS
        if tail and (int(words[-1]) >> tail) != 0:
            raise ValueError("padding bits must be zero")
        object.__setattr__(self, "words", words)

    def popcount(self) -> int:
        """Number of set bits == L0 norm of the binary vector."""
        return int(np.bitwise_count(self.words).sum())


def n_words(dims: int) -> int:
    return (dims + WORD_BITS - 1) // WORD_BITS


def pack_rows(h: np.ndarray) -> np.ndarray:
    """Pack bipolar vectors along the last axis into little-endian uint64 words.

    Shape (..., D) -> (..., ceil(D/64)). Rows are packed independently.
    """
    h = np.asarray(h)
    d = h.shape[-1]
    bits = (h > 0).astype(np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    pad = n_words(d) * 8 - packed.shape[-1]
    if pad:
        packed = np.concatenate(
            [packed, np.zeros(packed.shape[:-1] + (pad,), dtype=np.uint8)], axis=-1
        )
    return np.ascontiguousarray(packed).view(_WORD_DTYPE)


def unpack_rows(words: np.ndarray, dims: int) -> np.ndarray:
    """Inverse of pack_rows; returns float64 bipolar vectors of length ``dims``."""
    words = np.ascontiguousarray(words, dtype=_WORD_DTYPE)
    bytes_ = words.view(np.uint8)
    bits = np.unpackbits(bytes_, axis=-1, bitorder="little", count=dims)
    return bits.astype(np.float64) * 2.0 - 1.0


def pack(h: np.ndarray) -> PackedBits:
    """Pack a single bipolar hypervector."""
    h = _require_bipolar(h)
    if h.ndim != 1:
        raise ValueError("pack expects a 1-D hypervector; use pack_rows for batches")
    return PackedBits(dims=h.shape[0], words=pack_rows(h))


def unpack(b: PackedBits) -> np.ndarray:
    """Recover the bipolar hypervector from its packed form."""
    return unpack_rows(b.words, b.dims)


def _binarized_numerator(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """4*popcount(w1 & w2) - 2*popcount(w1) - 2*popcount(w2), per row pair."""
    pc_and = np.bitwise_count(w1 & w2).sum(axis=-1, dtype=np.int64)
    pc1 = np.bitwise_count(w1).sum(axis=-1, dtype=np.int64)
    pc2 = np.bitwise_count(w2).sum(axis=-1, dtype=np.int64)
    return 4 * pc_and - 2 * pc1 - 2 * pc2


def cosine_binarized(b1: PackedBits, b2: PackedBits) -> float:
    """Cosine similarity evaluated entirely on packed words.

    Uses only AND and popcounts until the final affine correction:
    1 + (4*|b1 & b2| - 2*|b1| - 2*|b2|) / D. Because that numerator equals
    <h1, h2> - D exactly, the returned float is bit-identical to
    cosine(unpack(b1), unpack(b2)).
    """
    if b1.dims != b2.dims:
        raise ValueError(f"dimension mismatch: {b1.dims} vs {b2.dims}")
    num = int(_binarized_numerator(b1.words, b2.words))
    return float(num + b1.dims) / b1.dims


def cosine_binarized_matrix(w1: np.ndarray, w2: np.ndarray, dims: int) -> np.ndarray:
    """Batched cosine_binarized on packed word arrays with matching shapes.

    Broadcasts over leading axes; the last axis must hold the packed words.
    Returns float64 scores bit-identical to the unpacked float path.
    """
    num = _binarized_numerator(np.asarray(w1, _WORD_DTYPE), np.asarray(w2, _WORD_DTYPE))
    return (num + dims).astype(np.float64) / dims


def cosine_matrix(h: np.ndarray) -> np.ndarray:
    """All-pairs cosine of bipolar row vectors: H @ H.T / D, exact float64."""
    h = np.asarray(h, dtype=np.float64)
    return (h @ h.swapaxes(-1, -2)) / h.shape[-1]


def random_hypervectors(rng: np.random.Generator, n: int, dims: int) -> np.ndarray:
    """n uniform random bipolar vectors, one per row, float64."""
    return rng.integers(0, 2, size=(n, dims)).astype(np.float64) * 2.0 - 1.0
