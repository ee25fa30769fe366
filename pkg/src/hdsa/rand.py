"""Deterministic randomness: Philox streams and an explicit Box-Muller.

Every random draw in the package flows from a root seed through a
counter-based Philox4x64 generator keyed by (seed, stream). Gaussian samples
are produced by an explicit Box-Muller transform over Philox uniforms so the
byte content of generated datasets is pinned by this module alone, not by
the host library's normal() implementation.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# stream ids for per-component sub-seeds derived from one root seed
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox4x64 generator keyed by the two words (seed, stream)."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_box_muller(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples via Box-Muller, consumed pairwise.

    For n outputs, m = ceil(n/2) pairs are formed from two uniform blocks
    drawn in order (u1 then u2, each of length m):

        r  = sqrt(-2 ln(1 - u1))
        z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)

    Outputs interleave as (z0[0], z1[0], z0[1], z1[1], ...) truncated to n,
    then reshape row-major. Using 1 - u1 keeps the log argument in (0, 1].
    """
    shape = tuple(np.atleast_1d(shape))
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out[:n].reshape(shape)


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a Philox generator's full state."""
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "counter": [int(x) for x in st["state"]["counter"]],
        "key": [int(x) for x in st["state"]["key"]],
        "buffer": [int(x) for x in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def restore_rng(state: dict) -> np.random.Generator:
    """Rebuild a generator from an rng_state() snapshot."""
    if state["bit_generator"] != "Philox":
        raise ValueError(f"unsupported bit generator {state['bit_generator']!r}")
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(state["counter"], dtype=np.uint64),
            "key": np.array(state["key"], dtype=np.uint64),
        },
        "buffer": np.array(state["buffer"], dtype=np.uint64),
        "buffer_pos": state["buffer_pos"],
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }
    return np.random.Generator(bg)
