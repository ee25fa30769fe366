"""End-to-end trainable models for the two relational tasks.

Architecture (A): batch-norm + dropout encoder, symbolic-attention block,
flatten, small ReLU head with a sigmoid output, for pairwise-order
classification.

Architecture (B): batch-norm encoder, symbolic-attention block, and a
standard transformer decoder (causal self-attention plus cross-attention to
the abstract states) that emits position indices, for object-sequence
sorting.

Training is deterministic per (dataset, settings, seed): model init draws
from stream (seed, STREAM_INIT) and subset sampling / shuffling / dropout
from (seed, STREAM_TRAIN). Checkpoints capture parameters, batch-norm
running stats, optimizer moments, the training RNG state, and the sampled
train subset, so a resumed run continues the exact trajectory.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import SymbolicAttentionConfig, SymbolicAttentionEncoder
from .autodiff import GradTape, NumericalError, Tensor
from .layers import (
    BatchNorm,
    Dense,
    Embedding,
    LayerNorm,
    MultiHeadAttention,
    causal_mask,
    prefixed,
    sinusoidal_positions,
)
from .optim import AdamW
from .rand import STREAM_INIT, STREAM_TRAIN, make_rng, restore_rng, rng_state
from .tasks import TaskDataset

CHECKPOINT_MAGIC = b"LVCK1\n"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file fails validation."""


# ---------------------------------------------------------------------------
# settings


@dataclass
class ClassifierSettings:
    """Pairwise-order model and optimizer settings (defaults per the task recipe)."""

    attention: SymbolicAttentionConfig = field(default_factory=lambda: SymbolicAttentionConfig(
        heads=1, hyper_dim=1000, feature_dim=32, max_positions=2, dropout=0.1))
    hidden_units: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    train_size: int = 200

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["attention"] = self.attention.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSettings":
        d = dict(d)
        d["attention"] = SymbolicAttentionConfig.from_dict(d["attention"])
        return cls(**d)


@dataclass
class SorterSettings:
    """Sequence-sorting model and optimizer settings (defaults per the task recipe)."""

    attention: SymbolicAttentionConfig = field(default_factory=lambda: SymbolicAttentionConfig(
        heads=2, hyper_dim=1000, feature_dim=12, max_positions=5, dropout=0.0))
    decoder_layers: int = 4
    decoder_heads: int = 2
    decoder_ff: int = 64
    d_model: int = 64
    learning_rate: float = 5e-4
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 150
    train_size: int = 460

    @property
    def seq_len(self) -> int:
        return self.attention.max_positions

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["attention"] = self.attention.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SorterSettings":
        d = dict(d)
        d["attention"] = SymbolicAttentionConfig.from_dict(d["attention"])
        return cls(**d)


# ---------------------------------------------------------------------------
# models


class PairwiseOrderClassifier:
    """Architecture (A): lightweight encoder, relational block, sigmoid head."""

    kind = "classifier"

    def __init__(self, settings: ClassifierSettings, rng):
        cfg = settings.attention
        self.settings = settings
        self.input_norm = BatchNorm(cfg.feature_dim)
        self.encoder = SymbolicAttentionEncoder(cfg, rng)
        flat = cfg.max_positions * cfg.feature_dim
        self.fc1 = Dense(flat, settings.hidden_units, rng)
        self.fc2 = Dense(settings.hidden_units, 1, rng)

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Probability that the first object precedes the second, per example."""
        t = Tensor(np.asarray(x, dtype=np.float32))
        h = self.input_norm(t, training)
        h = ad.dropout(h, self.settings.attention.dropout, training, rng)
        h = self.encoder(h, training)
        b = h.shape[0]
        h = ad.reshape(h, (b, -1))
        h = ad.relu(self.fc1(h))
        p = ad.sigmoid(self.fc2(h))
        return ad.reshape(p, (b,))

    def named_parameters(self):
        out = prefixed("input_norm", self.input_norm.params())
        out.update(prefixed("encoder", self.encoder.params()))
        out.update(prefixed("fc1", self.fc1.params()))
        out.update(prefixed("fc2", self.fc2.params()))
        return out

    def named_buffers(self):
        out = prefixed("input_norm", self.input_norm.buffers())
        out.update(prefixed("encoder", self.encoder.buffers()))
        return out

    def load_buffers(self, bufs: dict):
        self.input_norm.load_buffers(_strip(bufs, "input_norm."))
        self.encoder.load_buffers(_strip(bufs, "encoder."))


class DecoderLayer:
    """Post-norm transformer decoder block: masked self-attn, cross-attn, FF."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, src_dim: int, rng):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, kv_dim=src_dim)
        self.ff1 = Dense(d_model, d_ff, rng)
        self.ff2 = Dense(d_ff, d_model, rng)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ln3 = LayerNorm(d_model)

    def __call__(self, x: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        x = self.ln1(ad.add(x, self.self_attn(x, x, mask=mask)))
        x = self.ln2(ad.add(x, self.cross_attn(x, memory)))
        x = self.ln3(ad.add(x, self.ff2(ad.relu(self.ff1(x)))))
        return x

    def params(self):
        out = {}
        for name, lyr in (("self_attn", self.self_attn), ("cross_attn", self.cross_attn),
                          ("ff1", self.ff1), ("ff2", self.ff2),
                          ("ln1", self.ln1), ("ln2", self.ln2), ("ln3", self.ln3)):
            out.update(prefixed(name, lyr.params()))
        return out


class SequenceDecoder:
    """Autoregressive decoder over position-index tokens plus a start token."""

    def __init__(self, n_classes: int, d_model: int, n_heads: int, d_ff: int,
                 n_layers: int, src_dim: int, rng):
        self.n_classes = n_classes
        self.start_token = n_classes
        self.embed = Embedding(n_classes + 1, d_model, rng)
        self.positions = sinusoidal_positions(n_classes + 1, d_model)
        self.layers = [DecoderLayer(d_model, n_heads, d_ff, src_dim, rng)
                       for _ in range(n_layers)]
        self.out = Dense(d_model, n_classes, rng)

    def __call__(self, tokens: np.ndarray, memory: Tensor) -> Tensor:
        t = tokens.shape[1]
        x = ad.add(self.embed(tokens), Tensor(self.positions[:t]))
        mask = causal_mask(t)
        for layer in self.layers:
            x = layer(x, memory, mask)
        return self.out(x)

    def params(self):
        out = prefixed("embed", self.embed.params())
        for i, layer in enumerate(self.layers):
            out.update(prefixed(f"layer{i}", layer.params()))
        out.update(prefixed("out", self.out.params()))
        return out


class SequenceSorter:
    """Architecture (B): relational encoder + transformer decoder, seq2seq."""

    kind = "sorter"

    def __init__(self, settings: SorterSettings, rng):
        cfg = settings.attention
        self.settings = settings
        self.input_norm = BatchNorm(cfg.feature_dim)
        self.encoder = SymbolicAttentionEncoder(cfg, rng)
        self.decoder = SequenceDecoder(
            n_classes=settings.seq_len, d_model=settings.d_model,
            n_heads=settings.decoder_heads, d_ff=settings.decoder_ff,
            n_layers=settings.decoder_layers, src_dim=cfg.feature_dim, rng=rng)

    def encode(self, x: np.ndarray, training: bool) -> Tensor:
        t = Tensor(np.asarray(x, dtype=np.float32))
        return self.encoder(self.input_norm(t, training), training)

    def forward_teacher(self, x: np.ndarray, targets: np.ndarray, training: bool = False) -> Tensor:
        """Teacher-forced logits (B, L, L): predict target t from targets < t."""
        memory = self.encode(x, training)
        b = targets.shape[0]
        start = np.full((b, 1), self.decoder.start_token, dtype=targets.dtype)
        dec_in = np.concatenate([start, targets[:, :-1]], axis=1)
        return self.decoder(dec_in, memory)

    def greedy_decode(self, x: np.ndarray) -> np.ndarray:
        """Autoregressive argmax decoding; returns predicted index sequences."""
        memory = self.encode(x, training=False)
        b = np.asarray(x).shape[0]
        tokens = np.full((b, 1), self.decoder.start_token, dtype=np.int64)
        for _ in range(self.settings.seq_len):
            logits = self.decoder(tokens, memory)
            nxt = np.argmax(logits.data[:, -1], axis=-1)
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
        return tokens[:, 1:].astype(np.int32)

    def named_parameters(self):
        out = prefixed("input_norm", self.input_norm.params())
        out.update(prefixed("encoder", self.encoder.params()))
        out.update(prefixed("decoder", self.decoder.params()))
        return out

    def named_buffers(self):
        out = prefixed("input_norm", self.input_norm.buffers())
        out.update(prefixed("encoder", self.encoder.buffers()))
        return out

    def load_buffers(self, bufs: dict):
        self.input_norm.load_buffers(_strip(bufs, "input_norm."))
        self.encoder.load_buffers(_strip(bufs, "encoder."))


def _strip(d: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in d.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# reports and checkpoints


@dataclass
class TrainReport:
    task: str
    seed: int
    rows: list = field(default_factory=list)  # (epoch, split, loss, accuracy)
    test_loss: float = float("nan")
    test_accuracy: float = float("nan")
    wall_clock_s: float = 0.0

    def add(self, epoch: int, split: str, loss: float, accuracy: float):
        self.rows.append((epoch, split, loss, accuracy))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,split,loss,accuracy\n")
            for epoch, split, loss, acc in self.rows:
                f.write(f"{epoch},{split},{loss:.6f},{acc:.6f}\n")


@dataclass
class Checkpoint:
    """Everything needed to evaluate, or to continue training bit-exactly."""

    kind: str
    settings: dict
    epoch: int
    params: dict
    buffers: dict
    opt_state: dict
    opt_t: int
    train_rng: dict
    subset: list
    dataset_info: dict
    notes: dict = field(default_factory=dict)

    def save(self, path) -> None:
        meta = {
            "kind": self.kind,
            "settings": self.settings,
            "epoch": self.epoch,
            "opt_t": self.opt_t,
            "train_rng": self.train_rng,
            "subset": [int(i) for i in self.subset],
            "dataset_info": self.dataset_info,
            "notes": self.notes,
        }
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        tensors = {}
        tensors.update({f"param.{k}": v for k, v in self.params.items()})
        tensors.update({f"buffer.{k}": v for k, v in self.buffers.items()})
        tensors.update({f"opt.{k}": v for k, v in self.opt_state.items()})
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(np.uint32(CHECKPOINT_VERSION).astype("<u4").tobytes())
            f.write(np.uint32(len(meta_bytes)).astype("<u4").tobytes())
            f.write(meta_bytes)
            f.write(np.uint32(len(tensors)).astype("<u4").tobytes())
            for name, arr in tensors.items():
                encoded = name.encode("utf-8")
                f.write(np.uint16(len(encoded)).astype("<u2").tobytes())
                f.write(encoded)
                f.write(np.uint8(arr.ndim).astype("u1").tobytes())
                f.write(np.asarray(arr.shape, dtype="<u4").tobytes())
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    if buf.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    (version,) = np.frombuffer(buf.read(4), dtype="<u4")
    if int(version) != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {int(version)}")
    (meta_len,) = np.frombuffer(buf.read(4), dtype="<u4")
    meta = json.loads(buf.read(int(meta_len)).decode("utf-8"))
    (n_tensors,) = np.frombuffer(buf.read(4), dtype="<u4")
    tensors = {}
    for _ in range(int(n_tensors)):
        (name_len,) = np.frombuffer(buf.read(2), dtype="<u2")
        name = buf.read(int(name_len)).decode("utf-8")
        (ndim,) = np.frombuffer(buf.read(1), dtype="u1")
        shape = tuple(int(v) for v in np.frombuffer(buf.read(4 * int(ndim)), dtype="<u4"))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf.read(4 * count), dtype="<f4")
        if data.size != count:
            raise CheckpointFormatError(f"{path}: truncated tensor record {name!r}")
        tensors[name] = data.reshape(shape).copy()
    return Checkpoint(
        kind=meta["kind"],
        settings=meta["settings"],
        epoch=int(meta["epoch"]),
        params=_strip(tensors, "param."),
        buffers=_strip(tensors, "buffer."),
        opt_state=_strip(tensors, "opt."),
        opt_t=int(meta["opt_t"]),
        train_rng=meta["train_rng"],
        subset=meta["subset"],
        dataset_info=meta["dataset_info"],
        notes=meta.get("notes", {}),
    )


def _settings_from_dict(kind: str, d: dict):
    if kind == "classifier":
        return ClassifierSettings.from_dict(d)
    if kind == "sorter":
        return SorterSettings.from_dict(d)
    raise CheckpointFormatError(f"unknown checkpoint kind {kind!r}")


def restore_model(ckpt: Checkpoint):
    """Rebuild the model in the checkpoint and load every tensor into it."""
    settings = _settings_from_dict(ckpt.kind, ckpt.settings)
    model_cls = PairwiseOrderClassifier if ckpt.kind == "classifier" else SequenceSorter
    model = model_cls(settings, make_rng(0, STREAM_INIT))
    params = model.named_parameters()
    if set(params) != set(ckpt.params):
        raise CheckpointFormatError("checkpoint parameter names do not match the model")
    for name, p in params.items():
        arr = ckpt.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointFormatError(
                f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(np.float32).copy()
    model.load_buffers({k: v.astype(np.float32) for k, v in ckpt.buffers.items()})
    return model, settings


def _snapshot(model, opt: AdamW, epoch: int, rng_train, subset, dataset: TaskDataset,
              settings) -> Checkpoint:
    return Checkpoint(
        kind=model.kind,
        settings=settings.to_dict(),
        epoch=epoch,
        params={k: v.data.copy() for k, v in model.named_parameters().items()},
        buffers={k: v.copy() for k, v in model.named_buffers().items()},
        opt_state={k: v.copy() for k, v in opt.state_arrays().items()},
        opt_t=opt.t,
        train_rng=rng_state(rng_train),
        subset=[int(i) for i in subset],
        dataset_info={"task": dataset.task, "seed": dataset.seed},
        notes={"batch_norm_axes": "batch x position, per feature",
               "init": "uniform fan-in (dense), normal/sqrt(fan_in) (latent projections)"},
    )


# ---------------------------------------------------------------------------
# training loops


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _check_finite(loss_value: float, context: str):
    if not np.isfinite(loss_value):
        raise NumericalError(f"non-finite loss during {context}")


def train_classifier(dataset: TaskDataset, settings: ClassifierSettings, seed: int,
                     resume: Checkpoint | None = None):
    """Train the pairwise-order classifier; returns (Checkpoint, TrainReport).

    The per-trial train subset is sampled uniformly without replacement from
    the dataset's training pool using the trial seed; the object set and
    splits stay fixed with the dataset.
    """
    if dataset.task != "pairwise-order":
        raise ValueError(f"expected a pairwise-order dataset, got {dataset.task!r}")
    started = time.perf_counter()

    if resume is not None:
        model, settings = restore_model(resume)
        if model.kind != "classifier":
            raise ValueError("resume checkpoint is not a classifier")
        rng_train = restore_rng(resume.train_rng)
        subset = np.asarray(resume.subset, dtype=np.int64)
        opt = AdamW(model.named_parameters(), lr=settings.learning_rate,
                    weight_decay=settings.weight_decay)
        opt.load_state_arrays(resume.opt_state, resume.opt_t)
        start_epoch = resume.epoch
    else:
        pool = dataset.indices("train")
        if settings.train_size > len(pool):
            raise ValueError(f"train_size {settings.train_size} exceeds pool {len(pool)}")
        rng_train = make_rng(seed, STREAM_TRAIN)
        subset = rng_train.permutation(pool)[:settings.train_size]
        model = PairwiseOrderClassifier(settings, make_rng(seed, STREAM_INIT))
        opt = AdamW(model.named_parameters(), lr=settings.learning_rate,
                    weight_decay=settings.weight_decay)
        start_epoch = 0

    report = TrainReport(task=dataset.task, seed=seed)
    for epoch in range(start_epoch + 1, settings.epochs + 1):
        order = rng_train.permutation(subset)
        losses, hits, seen = [], 0, 0
        for batch in _batches(order, settings.batch_size):
            x, y = dataset.objects[batch], dataset.targets[batch]
            with GradTape() as tape:
                p = model.forward(x, training=True, rng=rng_train)
                loss = ad.binary_cross_entropy(p, y.astype(np.float32))
            _check_finite(loss.item(), f"epoch {epoch}")
            tape.backward(loss)
            opt.step()
            losses.append(loss.item())
            hits += int(np.sum((p.data >= 0.5) == y))
            seen += len(batch)
        report.add(epoch, "train", float(np.mean(losses)), hits / seen)
        val_loss, val_acc = _classifier_metrics(model, dataset, "val")
        report.add(epoch, "val", val_loss, val_acc)

    report.test_loss, report.test_accuracy = _classifier_metrics(model, dataset, "test")
    report.wall_clock_s = time.perf_counter() - started
    ckpt = _snapshot(model, opt, settings.epochs, rng_train, subset, dataset, settings)
    return ckpt, report


def _classifier_metrics(model: PairwiseOrderClassifier, dataset: TaskDataset,
                        split: str, chunk: int = 512):
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    losses, hits = [], 0
    for batch in _batches(idx, chunk):
        x, y = dataset.objects[batch], dataset.targets[batch]
        p = model.forward(x, training=False)
        loss = ad.binary_cross_entropy(p, y.astype(np.float32))
        losses.append(loss.item() * len(batch))
        hits += int(np.sum((p.data >= 0.5) == y))
    return float(np.sum(losses) / len(idx)), hits / len(idx)


def train_sorter(dataset: TaskDataset, settings: SorterSettings, seed: int,
                 resume: Checkpoint | None = None):
    """Train the seq2seq sorter; returns (Checkpoint, TrainReport).

    Teacher forcing with cross-entropy over position indices; per-epoch val
    rows use teacher-forced metrics, while the final test numbers use
    autoregressive greedy decoding.
    """
    if dataset.task != "sorting":
        raise ValueError(f"expected a sorting dataset, got {dataset.task!r}")
    if int(dataset.meta.get("seq_len", settings.seq_len)) != settings.seq_len:
        raise ValueError("dataset seq_len does not match settings")
    started = time.perf_counter()

    if resume is not None:
        model, settings = restore_model(resume)
        if model.kind != "sorter":
            raise ValueError("resume checkpoint is not a sorter")
        rng_train = restore_rng(resume.train_rng)
        subset = np.asarray(resume.subset, dtype=np.int64)
        opt = AdamW(model.named_parameters(), lr=settings.learning_rate,
                    weight_decay=settings.weight_decay)
        opt.load_state_arrays(resume.opt_state, resume.opt_t)
        start_epoch = resume.epoch
    else:
        pool = dataset.indices("train")
        if settings.train_size > len(pool):
            raise ValueError(f"train_size {settings.train_size} exceeds pool {len(pool)}")
        rng_train = make_rng(seed, STREAM_TRAIN)
        subset = rng_train.permutation(pool)[:settings.train_size]
        model = SequenceSorter(settings, make_rng(seed, STREAM_INIT))
        opt = AdamW(model.named_parameters(), lr=settings.learning_rate,
                    weight_decay=settings.weight_decay)
        start_epoch = 0

    report = TrainReport(task=dataset.task, seed=seed)
    for epoch in range(start_epoch + 1, settings.epochs + 1):
        order = rng_train.permutation(subset)
        losses, hits, seen = [], 0, 0
        for batch in _batches(order, settings.batch_size):
            x, y = dataset.objects[batch], dataset.targets[batch]
            with GradTape() as tape:
                logits = model.forward_teacher(x, y, training=True)
                loss = ad.cross_entropy(logits, y)
            _check_finite(loss.item(), f"epoch {epoch}")
            tape.backward(loss)
            opt.step()
            losses.append(loss.item())
            hits += int(np.sum(np.argmax(logits.data, axis=-1) == y))
            seen += y.size
        report.add(epoch, "train", float(np.mean(losses)), hits / seen)
        val_loss, val_acc = _sorter_teacher_metrics(model, dataset, "val")
        report.add(epoch, "val", val_loss, val_acc)

    report.test_loss, report.test_accuracy = sorter_greedy_metrics(model, dataset, "test")
    report.wall_clock_s = time.perf_counter() - started
    ckpt = _snapshot(model, opt, settings.epochs, rng_train, subset, dataset, settings)
    return ckpt, report


def _sorter_teacher_metrics(model: SequenceSorter, dataset: TaskDataset,
                            split: str, chunk: int = 256):
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    losses, hits, seen = [], 0, 0
    for batch in _batches(idx, chunk):
        x, y = dataset.objects[batch], dataset.targets[batch]
        logits = model.forward_teacher(x, y, training=False)
        loss = ad.cross_entropy(logits, y)
        losses.append(loss.item() * y.size)
        hits += int(np.sum(np.argmax(logits.data, axis=-1) == y))
        seen += y.size
    return float(np.sum(losses) / seen), hits / seen


def sorter_greedy_metrics(model: SequenceSorter, dataset: TaskDataset,
                          split: str, chunk: int = 256):
    """Teacher-forced loss plus element-wise accuracy of greedy decoding."""
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    losses, hits, seen = [], 0, 0
    for batch in _batches(idx, chunk):
        x, y = dataset.objects[batch], dataset.targets[batch]
        logits = model.forward_teacher(x, y, training=False)
        losses.append(ad.cross_entropy(logits, y).item() * y.size)
        pred = model.greedy_decode(x)
        hits += int(np.sum(pred == y))
        seen += y.size
    return float(np.sum(losses) / seen), hits / seen


# ---------------------------------------------------------------------------
# evaluation


def _forward_probs(model: PairwiseOrderClassifier, dataset, idx, chunk=512) -> np.ndarray:
    out = []
    for batch in _batches(idx, chunk):
        out.append(model.forward(dataset.objects[batch], training=False).data)
    return np.concatenate(out)


def evaluate(ckpt: Checkpoint, dataset: TaskDataset, split: str = "test",
             binarized: bool = False) -> dict:
    """Frozen-model metrics on one split; eval mode throughout.

    With ``binarized`` the attention scores are recomputed with the packed
    AND+popcount kernel; outputs are verified to match the exact path
    within 1e-9 before the binarized-path metrics are reported.
    """
    model, settings = restore_model(ckpt)
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")

    def set_mode(mode: str):
        model.encoder.config = SymbolicAttentionConfig.from_dict(
            {**model.encoder.config.to_dict(), "score_mode": mode})
        for head in model.encoder.heads:
            head.config = model.encoder.config

    if ckpt.kind == "classifier":
        if binarized:
            set_mode("exact")
            exact = _forward_probs(model, dataset, idx)
            set_mode("binarized")
            packed = _forward_probs(model, dataset, idx)
            drift = float(np.max(np.abs(exact - packed)))
            if drift > 1e-9:
                raise NumericalError(f"dual-path outputs diverge by {drift:.3e}")
        loss, acc = _classifier_metrics(model, dataset, split)
        return {"split": split, "loss": loss, "accuracy": acc, "n": len(idx),
                "binarized": binarized}

    if binarized:
        set_mode("exact")
        exact = np.concatenate([model.forward_teacher(dataset.objects[b], dataset.targets[b],
                                                      training=False).data.reshape(-1)
                                for b in _batches(idx, 256)])
        set_mode("binarized")
        packed = np.concatenate([model.forward_teacher(dataset.objects[b], dataset.targets[b],
                                                       training=False).data.reshape(-1)
                                 for b in _batches(idx, 256)])
        drift = float(np.max(np.abs(exact - packed)))
        if drift > 1e-9:
            raise NumericalError(f"dual-path logits diverge by {drift:.3e}")
    loss, acc = sorter_greedy_metrics(model, dataset, split)
    return {"split": split, "loss": loss, "accuracy": acc, "n": len(idx),
            "binarized": binarized}
