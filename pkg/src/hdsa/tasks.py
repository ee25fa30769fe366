"""Synthetic relational datasets: pairwise order and object-sequence sorting.

Generation is pure given a seed: all randomness comes from a Philox stream
keyed by (seed, STREAM_DATA) and Gaussians use the explicit Box-Muller
transform, so regenerating with the same seed reproduces identical bytes on
any platform.

Datasets are stored in a small self-describing container (magic "LVSA1\\n",
length-prefixed key=value metadata, then raw little-endian arrays).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .rand import STREAM_DATA, make_rng, normal_box_muller

MAGIC = b"LVSA1\n"

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}

PAIRWISE_N_OBJECTS = 64
PAIRWISE_FEATURES = 32
SORT_N_PRIMARY = 4
SORT_PRIMARY_DIM = 4
SORT_N_SECONDARY = 12
SORT_SECONDARY_DIM = 8


class DatasetFormatError(ValueError):
    """Raised when a dataset container fails validation on read."""


@dataclass
class TaskDataset:
    """Generated examples with per-example split tags.

    ``objects`` is float32 (P, N, F); ``targets`` is int32, either (P,) class
    labels or (P, L) permutations; ``split`` holds SPLIT_* tags per example.
    """

    task: str
    seed: int
    objects: np.ndarray
    targets: np.ndarray
    split: np.ndarray
    meta: dict = field(default_factory=dict)

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_NAMES[split])

    def split_counts(self) -> tuple[int, int, int]:
        return tuple(int(np.sum(self.split == tag)) for tag in (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST))

    def __eq__(self, other):
        return (
            isinstance(other, TaskDataset)
            and self.task == other.task
            and self.seed == other.seed
            and self.objects.shape == other.objects.shape
            and np.array_equal(self.objects, other.objects)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.split, other.split)
            and self.meta == other.meta
        )


def _assign_splits(rng: np.random.Generator, total: int, n_val: int, n_test: int) -> np.ndarray:
    """Random split tags with the given val/test counts; the remainder trains."""
    order = rng.permutation(total)
    split = np.full(total, SPLIT_TRAIN, dtype=np.int32)
    split[order[:n_test]] = SPLIT_TEST
    split[order[n_test:n_test + n_val]] = SPLIT_VAL
    return split


# ---------------------------------------------------------------------------
# pairwise order task


def pairwise_order_pairs(include_diagonal: bool = False) -> np.ndarray:
    """Ordered (i, j) index pairs in row-major order; labels are 1 iff i < j.

    The order relation is strict, so i == j pairs are excluded by default;
    the compatibility flag keeps them (labeled 0) to reach the full 64*64
    grid.
    """
    grid = np.indices((PAIRWISE_N_OBJECTS, PAIRWISE_N_OBJECTS)).reshape(2, -1).T
    if not include_diagonal:
        grid = grid[grid[:, 0] != grid[:, 1]]
    return grid.astype(np.int32)


def gen_pairwise_order(seed: int, include_diagonal: bool = False) -> TaskDataset:
    """All labeled object pairs of a fresh random ordered object set.

    64 objects are drawn iid Gaussian in R^32 and totally ordered by index.
    Every ordered pair becomes one example (two object rows). The training
    pool is exactly half the pairs (floor) and validation is 15% (floor);
    the test split takes the remainder, about 35%. On the full 4096-pair
    grid this yields pool 2048 / val 614 / test 1434.
    """
    rng = make_rng(seed, STREAM_DATA)
    objects = normal_box_muller(
        rng, (PAIRWISE_N_OBJECTS, PAIRWISE_FEATURES)).astype(np.float32)
    pairs = pairwise_order_pairs(include_diagonal)
    x = objects[pairs]                                   # (P, 2, 32)
    y = (pairs[:, 0] < pairs[:, 1]).astype(np.int32)
    total = len(pairs)
    n_pool = total // 2
    n_val = int(np.floor(0.15 * total))
    split = _assign_splits(rng, total, n_val=n_val, n_test=total - n_pool - n_val)
    meta = {
        "n_objects": str(PAIRWISE_N_OBJECTS),
        "include_diagonal": str(int(include_diagonal)),
    }
    return TaskDataset("pairwise-order", seed, np.ascontiguousarray(x), y, split, meta)


# ---------------------------------------------------------------------------
# object sorting task


def sorting_object_set(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The 48 two-attribute objects and their total-order ranks.

    Four primary attributes in R^4 and twelve secondary attributes in R^8
    are drawn iid Gaussian; object (i, j) concatenates primary i with
    secondary j and ranks lexicographically (primary key first), so object
    (i, j) has rank 12*i + j.
    """
    rng = make_rng(seed, STREAM_DATA)
    primary = normal_box_muller(rng, (SORT_N_PRIMARY, SORT_PRIMARY_DIM))
    secondary = normal_box_muller(rng, (SORT_N_SECONDARY, SORT_SECONDARY_DIM))
    objs = np.empty((SORT_N_PRIMARY * SORT_N_SECONDARY,
                     SORT_PRIMARY_DIM + SORT_SECONDARY_DIM), dtype=np.float32)
    for i in range(SORT_N_PRIMARY):
        for j in range(SORT_N_SECONDARY):
            objs[i * SORT_N_SECONDARY + j, :SORT_PRIMARY_DIM] = primary[i]
            objs[i * SORT_N_SECONDARY + j, SORT_PRIMARY_DIM:] = secondary[j]
    ranks = np.arange(SORT_N_PRIMARY * SORT_N_SECONDARY, dtype=np.int32)
    return objs, ranks


def gen_sorting(seed: int, seq_len: int = 5, n_samples: int = 2000) -> TaskDataset:
    """Distinct random object sequences with argsort targets.

    Each example draws ``seq_len`` distinct objects in random order; the
    target is the permutation that sorts them under the two-key order.
    Sequences are unique within the dataset. Split tags follow 70/10/20
    train/val/test with floor rounding on val and test.
    """
    if seq_len not in (5, 6):
        raise ValueError("seq_len must be 5 or 6")
    n_objects = SORT_N_PRIMARY * SORT_N_SECONDARY
    rng = make_rng(seed, STREAM_DATA)
    objs, ranks = sorting_object_set(seed)

    seen = set()
    sequences = np.empty((n_samples, seq_len), dtype=np.int64)
    count = 0
    while count < n_samples:
        seq = tuple(int(v) for v in rng.permutation(n_objects)[:seq_len])
        if seq in seen:
            continue
        seen.add(seq)
        sequences[count] = seq
        count += 1

    x = objs[sequences]                                   # (n, L, 12)
    targets = np.argsort(ranks[sequences], axis=1).astype(np.int32)
    split = _assign_splits(rng, n_samples,
                           n_val=int(np.floor(0.10 * n_samples)),
                           n_test=int(np.floor(0.20 * n_samples)))
    meta = {"seq_len": str(seq_len), "n_base_objects": str(n_objects)}
    return TaskDataset("sorting", seed, np.ascontiguousarray(x), targets, split, meta)


def generate(task: str, seed: int, **kwargs) -> TaskDataset:
    if task == "pairwise-order":
        return gen_pairwise_order(seed, **kwargs)
    if task == "sorting":
        return gen_sorting(seed, **kwargs)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# container IO


def _meta_block(ds: TaskDataset) -> bytes:
    counts = ds.split_counts()
    lines = [
        f"task={ds.task}",
        f"seed={ds.seed}",
        "objects_shape=" + ",".join(map(str, ds.objects.shape)),
        "targets_shape=" + ",".join(map(str, ds.targets.shape)),
        f"split_counts={counts[0]},{counts[1]},{counts[2]}",
    ]
    lines += [f"{k}={v}" for k, v in sorted(ds.meta.items())]
    return "\n".join(lines).encode("utf-8")


def write_dataset(ds: TaskDataset, path) -> None:
    meta = _meta_block(ds)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(len(meta)).astype("<u4").tobytes())
        f.write(meta)
        f.write(np.ascontiguousarray(ds.objects, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(ds.targets, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(ds.split, dtype="<i4").tobytes())


def read_dataset(path) -> TaskDataset:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    if buf.read(len(MAGIC)) != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic, not a dataset container")
    (meta_len,) = np.frombuffer(buf.read(4), dtype="<u4")
    meta_bytes = buf.read(int(meta_len))
    if len(meta_bytes) != meta_len:
        raise DatasetFormatError(f"{path}: truncated metadata block")
    fields = {}
    for line in meta_bytes.decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        obj_shape = tuple(int(v) for v in fields["objects_shape"].split(","))
        tgt_shape = tuple(int(v) for v in fields["targets_shape"].split(","))
        counts = tuple(int(v) for v in fields["split_counts"].split(","))
        task = fields["task"]
        seed = int(fields["seed"])
    except KeyError as exc:
        raise DatasetFormatError(f"{path}: missing metadata key {exc}") from exc

    n_examples = obj_shape[0]
    expected = (len(MAGIC) + 4 + int(meta_len)
                + 4 * (int(np.prod(obj_shape)) + int(np.prod(tgt_shape)) + n_examples))
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: size mismatch, expected {expected} bytes, found {len(raw)}")

    objects = np.frombuffer(buf.read(4 * int(np.prod(obj_shape))), dtype="<f4").reshape(obj_shape)
    targets = np.frombuffer(buf.read(4 * int(np.prod(tgt_shape))), dtype="<i4").reshape(tgt_shape)
    split = np.frombuffer(buf.read(4 * n_examples), dtype="<i4")
    meta = {k: v for k, v in fields.items()
            if k not in ("task", "seed", "objects_shape", "targets_shape", "split_counts")}
    ds = TaskDataset(task, seed, objects.copy(), targets.copy(), split.copy(), meta)
    if ds.split_counts() != counts:
        raise DatasetFormatError(f"{path}: split counts in header do not match content")
    return ds
