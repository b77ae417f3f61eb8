"""Binary cross-entropy training over a Graph, with freezing and checkpoints.

Streams are callables mapping an epoch index to an iterable of (batch,
labels) pairs, so each epoch can re-iterate and reshuffle deterministically.
Given identical config, seed and data, two runs produce bitwise-identical
parameters and checkpoints.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, backward, forward, resolve_freeze

CHECKPOINT_MAGIC = b"ALNC"
CHECKPOINT_VERSION = 1
_SENTINEL_ID = 0xFFFFFFFF  # slot carrying optimizer scalar state (adam step count)

OPTIMIZERS = ("sgd", "sgd-momentum", "adam")


class NumericError(ArithmeticError):
    """A loss or gradient went non-finite mid-training."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the target graph."""


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    freeze: tuple[str, ...] = ()
    clip: float | None = 5.0
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"learning rate must be finite and > 0, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.clip is not None and self.clip <= 0:
            raise ValueError(f"clip must be positive or None, got {self.clip}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},{r.val_loss:.6f},{r.val_acc:.6f}"
            )
        return "\n".join(lines) + "\n"


def bce_loss(predictions: np.ndarray, labels, eps: float = 1e-7) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [eps, 1-eps] before the log; the returned
    gradient is (p - y) / (p (1 - p) n) at the clamped values.
    """
    flat = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if flat.shape != y.shape:
        raise ValueError(f"got {flat.size} predictions but {y.size} labels")
    n = flat.size
    p = np.clip(flat, eps, 1.0 - eps)
    loss = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    grad = (p - y) / (p * (1.0 - p) * n)
    pred_arr = np.asarray(predictions)
    return loss, grad.reshape(pred_arr.shape).astype(pred_arr.dtype)


@dataclass
class OptimizerState:
    kind: str
    slots: dict  # (node_id, param_name) -> {"v": ...} or {"m": ..., "v": ...}
    t: int = 0


def init_optimizer_state(graph: Graph, cfg: TrainConfig, frozen: set[int]) -> OptimizerState:
    slots = {}
    if cfg.optimizer != "sgd":
        for nid, name, arr in graph.param_items():
            if not graph.node(nid).trainable or nid in frozen:
                continue
            if cfg.optimizer == "sgd-momentum":
                slots[(nid, name)] = {"v": np.zeros_like(arr)}
            else:
                slots[(nid, name)] = {"m": np.zeros_like(arr), "v": np.zeros_like(arr)}
    return OptimizerState(cfg.optimizer, slots)


def global_grad_norm(param_grads: dict) -> float:
    total = 0.0
    for grads in param_grads.values():
        for g in grads.values():
            total += float(np.sum(g.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(param_grads: dict, cap: float) -> float:
    """Scale all gradients in place so the global norm is at most cap."""
    norm = global_grad_norm(param_grads)
    if norm > cap:
        scale = np.float32(cap / norm)
        for grads in param_grads.values():
            for g in grads.values():
                g *= scale
    return norm

def optimizer_step(graph: Graph, param_grads: dict, state: OptimizerState,
                   cfg: TrainConfig) -> OptimizerState:
    """Apply one update in place; parameters without gradients stay untouched."""
    for nid, grads in param_grads.items():
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for node {nid} ({name})")
    state.t += 1
    for nid, name, arr in graph.param_items():
        if nid not in param_grads or name not in param_grads[nid]:
            continue
        g = param_grads[nid][name].astype(arr.dtype, copy=False)
        if state.kind == "sgd":
            arr -= np.float32(cfg.lr) * g
        elif state.kind == "sgd-momentum":
            v = state.slots[(nid, name)]["v"]
            v *= np.float32(cfg.momentum)
            v += g
            arr -= np.float32(cfg.lr) * v
        else:
            slot = state.slots[(nid, name)]
            m, v = slot["m"], slot["v"]
            b1, b2 = np.float32(cfg.adam_beta1), np.float32(cfg.adam_beta2)
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * g * g
            m_hat = m / np.float32(1.0 - cfg.adam_beta1 ** state.t)
            v_hat = v / np.float32(1.0 - cfg.adam_beta2 ** state.t)
            arr -= np.float32(cfg.lr) * m_hat / (np.sqrt(v_hat) + np.float32(cfg.adam_eps))
    return state


def evaluate(graph: Graph, batches) -> tuple[np.ndarray, np.ndarray]:
    """Score a batch stream; pure, never mutates parameters."""
    scores, labels = [], []
    for x, y in batches:
        out = forward(graph, x).output(graph)
        scores.append(out.reshape(-1))
        labels.append(np.asarray(y).reshape(-1))
    return np.concatenate(scores), np.concatenate(labels).astype(np.int64)


def train(graph: Graph, train_stream, val_stream, cfg: TrainConfig):
    """Run the full training loop; returns (History, Checkpoint).

    train_stream / val_stream: callables epoch -> iterable of (batch, labels).
    """
    frozen = resolve_freeze(graph, cfg.freeze)
    state = init_optimizer_state(graph, cfg, frozen)
    rng = np.random.default_rng(cfg.seed)
    history = History()
    threshold = 0.5
    for epoch in range(cfg.epochs):
        loss_sum, correct, seen = 0.0, 0, 0
        for batch_idx, (x, y) in enumerate(train_stream(epoch)):
            tape = forward(graph, x)
            out = tape.output(graph)
            loss, grad = bce_loss(out, y)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {batch_idx}")
            param_grads = backward(graph, tape, grad, frozen)
            if cfg.clip is not None:
                clip_gradients(param_grads, cfg.clip)
            optimizer_step(graph, param_grads, state, cfg)
            preds = out.reshape(-1)
            n = preds.size
            loss_sum += loss * n
            correct += int(np.sum((preds >= threshold) == (np.asarray(y).reshape(-1) == 1)))
            seen += n
        val_scores, val_labels = evaluate(graph, val_stream(epoch))
        val_loss, _ = bce_loss(val_scores, val_labels)
        val_acc = float(np.mean((val_scores >= threshold) == (val_labels == 1)))
        history.records.append(
            EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc)
        )
    return history, make_checkpoint(graph, state, cfg.epochs, rng)


@dataclass
class Checkpoint:
    fingerprint: int
    param_entries: list  # (node_id, array) in graph param order
    slot_entries: list  # (node_id, array); layout depends on optimizer kind
    epoch: int
    rng_state: bytes
    version: int = CHECKPOINT_VERSION


def _rng_state_bytes(rng: np.random.Generator) -> bytes:
    st = rng.bit_generator.state["state"]
    return st["state"].to_bytes(16, "little") + st["inc"].to_bytes(16, "little")


def _rng_from_state_bytes(blob: bytes) -> np.random.Generator:
    rng = np.random.default_rng(0)
    st = rng.bit_generator.state
    st["state"]["state"] = int.from_bytes(blob[:16], "little")
    st["state"]["inc"] = int.from_bytes(blob[16:32], "little")
    rng.bit_generator.state = st
    return rng


def make_checkpoint(graph: Graph, state: OptimizerState, epoch: int,
                    rng: np.random.Generator) -> Checkpoint:
    params = [(nid, arr.copy()) for nid, _, arr in graph.param_items()]
    slots = []
    for nid, name, _ in graph.param_items():
        slot = state.slots.get((nid, name))
        if slot is None:
            continue
        if state.kind == "sgd-momentum":
            slots.append((nid, slot["v"].copy()))
        else:
            slots.append((nid, slot["m"].copy()))
            slots.append((nid, slot["v"].copy()))
    if state.kind == "adam":
        slots.append((_SENTINEL_ID, np.array([state.t], dtype=np.float32)))
    return Checkpoint(graph.fingerprint(), params, slots, epoch, _rng_state_bytes(rng))


def _frame_dims(shape: tuple) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in shape) + (1, 1, 1, 1)
    return dims[:4]


def _write_entry(fh, nid: int, arr: np.ndarray) -> None:
    fh.write(struct.pack("<I", nid))
    fh.write(struct.pack("<4I", *_frame_dims(arr.shape)))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary layout: magic, u32 version, u64 fingerprint, u32 tensor count,
    then per tensor (u32 node id, four u32 dims, float32 payload); optimizer
    slots in the same framing; u32 epoch; 32-byte RNG state."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", ckpt.fingerprint))
        fh.write(struct.pack("<I", len(ckpt.param_entries)))
        for nid, arr in ckpt.param_entries:
            _write_entry(fh, nid, arr)
        fh.write(struct.pack("<I", len(ckpt.slot_entries)))
        for nid, arr in ckpt.slot_entries:
            _write_entry(fh, nid, arr)
        fh.write(struct.pack("<I", ckpt.epoch))
        fh.write(ckpt.rng_state)


def _read_exact(fh, count: int, path, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return blob


def _read_entries(fh, path, what: str) -> list:
    (count,) = struct.unpack("<I", _read_exact(fh, 4, path, f"{what} count"))
    entries = []
    for _ in range(count):
        (nid,) = struct.unpack("<I", _read_exact(fh, 4, path, f"{what} node id"))
        dims = struct.unpack("<4I", _read_exact(fh, 16, path, f"{what} dims"))
        numel = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(fh, 4 * numel, path, f"{what} payload")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
        entries.append((nid, arr))
    return entries


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (fingerprint,) = struct.unpack("<Q", _read_exact(fh, 8, path, "fingerprint"))
        params = _read_entries(fh, path, "parameter")
        slots = _read_entries(fh, path, "optimizer slot")
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4, path, "epoch"))
        rng_state = _read_exact(fh, 32, path, "rng state")
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return Checkpoint(fingerprint, params, slots, epoch, rng_state)


def restore_checkpoint(graph: Graph, ckpt: Checkpoint) -> None:
    """Copy checkpoint parameters into the graph; fingerprints must match."""
    expected = graph.fingerprint()
    if ckpt.fingerprint != expected:
        raise CheckpointError(
            f"checkpoint fingerprint {ckpt.fingerprint:#018x} does not match graph "
            f"{expected:#018x} (different architecture)"
        )
    targets = list(graph.param_items())
    if len(targets) != len(ckpt.param_entries):
        raise CheckpointError(
            f"checkpoint holds {len(ckpt.param_entries)} parameter tensors, "
            f"graph expects {len(targets)}"
        )
    for (nid, name, arr), (saved_nid, saved) in zip(targets, ckpt.param_entries):
        if nid != saved_nid:
            raise CheckpointError(
                f"parameter tensor for node {saved_nid} arrived where node {nid} was expected"
            )
        if saved.size != arr.size:
            raise CheckpointError(
                f"node {nid} ({name}): checkpoint tensor has {saved.size} values, "
                f"graph expects {arr.size}"
            )
        arr[...] = saved.reshape(arr.shape).astype(arr.dtype)
