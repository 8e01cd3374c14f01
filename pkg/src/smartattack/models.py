"""Small differentiable action classifiers, their training loop and checkpoint files.

Every architecture consumes joint positions ``(B, T, 75)`` and returns logits
``(B, K)``; softmax is left to callers.
"""

from __future__ import annotations

import hashlib
import math
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION
from . import autograd as ag
from .autograd import AdamState, Tensor, adam_step
from .errors import CheckpointError, ModelInputError, TrainingError
from .skeleton import DOF_COUNT, Skeleton, standard_skeleton

ARCHITECTURES = ("FrameMLP", "TConvNet", "SkelGCN", "BoneTConvNet")

HIDDEN = 64
KERNEL = 5
GCN_WIDTHS = (3, 16, 32)


@dataclass
class ModelCheckpoint:
    architecture_id: str
    class_count: int
    params: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture_id not in ARCHITECTURES:
            raise CheckpointError(f"unknown architecture {self.architecture_id!r}")
        expected = param_shapes(self.architecture_id, self.class_count)
        if list(self.params) != list(expected):
            raise CheckpointError(f"{self.architecture_id}: parameter names {list(self.params)} "
                                  f"do not match {list(expected)}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise CheckpointError(f"{name}: non-finite weights")
            self.params[name] = arr

    @property
    def layer_shapes(self):
        return {k: v.shape for k, v in self.params.items()}


def param_shapes(arch: str, k: int, skeleton: Skeleton | None = None) -> dict:
    j = (skeleton or standard_skeleton()).joint_count
    h = HIDDEN
    if arch == "FrameMLP":
        return {"W1": (DOF_COUNT, h), "b1": (h,), "W2": (h, h), "b2": (h,),
                "W3": (h, k), "b3": (k,)}
    if arch in ("TConvNet", "BoneTConvNet"):
        cin = DOF_COUNT if arch == "TConvNet" else DOF_COUNT + 3 * (j - 1)
        return {"C1": (KERNEL * cin, h), "c1": (h,), "C2": (KERNEL * h, h), "c2": (h,),
                "W": (h, k), "b": (k,)}
    if arch == "SkelGCN":
        a, b, c = GCN_WIDTHS
        return {"G1": (a, b), "g1": (b,), "G2": (b, c), "g2": (c,), "W": (j * c, k), "b": (k,)}
    raise CheckpointError(f"unknown architecture {arch!r}")


def init_params(arch: str, class_count: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(arch, class_count).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, shape)
    return params


def new_checkpoint(arch: str, class_count: int, seed: int = 0) -> ModelCheckpoint:
    return ModelCheckpoint(arch, class_count, init_params(arch, class_count, seed), {"seed": seed})


# -- forward ------------------------------------------------------------------

def normalized_adjacency(skeleton: Skeleton | None = None) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 over the skeleton's bones."""
    a = (skeleton or standard_skeleton()).adjacency() + np.eye((skeleton or standard_skeleton()).joint_count)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def compute_bones_layer(frames, skeleton: Skeleton | None = None):
    """Parameter-free layer: joint rows (..., 75) -> bone vectors child - parent (..., 72)."""
    frames = frames if isinstance(frames, Tensor) else Tensor(frames)
    return ag.matmul(frames, Tensor((skeleton or standard_skeleton()).bone_matrix()))


def _tconv(x, p):
    h = ag.relu(ag.conv1d(x, p["C1"], p["c1"]))
    h = ag.relu(ag.conv1d(h, p["C2"], p["c2"]))
    return ag.add(ag.matmul(ag.mean(h, axis=1), p["W"]), p["b"])


def _frame_mlp(x, p):
    h = ag.tanh(ag.add(ag.matmul(x, p["W1"]), p["b1"]))
    h = ag.tanh(ag.add(ag.matmul(h, p["W2"]), p["b2"]))
    return ag.add(ag.matmul(ag.mean(h, axis=1), p["W3"]), p["b3"])


def _skel_gcn(x, p, adjacency):
    b, t, _ = x.shape
    a_hat = Tensor(adjacency)
    j = adjacency.shape[0]
    h = ag.reshape(x, (b, t, j, 3))
    h = ag.tanh(ag.add(ag.matmul(ag.matmul(a_hat, h), p["G1"]), p["g1"]))
    h = ag.tanh(ag.add(ag.matmul(ag.matmul(a_hat, h), p["G2"]), p["g2"]))
    h = ag.reshape(h, (b, t, -1))
    return ag.add(ag.matmul(ag.mean(h, axis=1), p["W"]), p["b"])


def forward(checkpoint: ModelCheckpoint, motions, params=None, skeleton: Skeleton | None = None):
    """Logits for (T, 75) or (B, T, 75) input; differentiable w.r.t. inputs and ``params``."""
    x = motions if isinstance(motions, Tensor) else Tensor(motions)
    single = x.ndim == 2
    if single:
        x = ag.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[-1] != DOF_COUNT:
        raise ModelInputError(f"expected (..., T, {DOF_COUNT}) joint input, got {x.shape}")
    p = params if params is not None else {k: Tensor(v) for k, v in checkpoint.params.items()}
    arch = checkpoint.architecture_id
    if arch == "FrameMLP":
        logits = _frame_mlp(x, p)
    elif arch == "TConvNet":
        logits = _tconv(x, p)
    elif arch == "BoneTConvNet":
        logits = _tconv(ag.concat([x, compute_bones_layer(x, skeleton)], axis=-1), p)
    elif arch == "SkelGCN":
        logits = _skel_gcn(x, p, normalized_adjacency(skeleton))
    else:
        raise CheckpointError(f"unknown architecture {arch!r}")
    return ag.reshape(logits, (logits.shape[-1],)) if single else logits


def predict_logits(checkpoint, frames, batch_size=256) -> np.ndarray:
    """Numpy logits for a stack (N, T, 75), evaluated in chunks without recording a tape."""
    frames = np.asarray(frames, dtype=np.float64)
    out = [forward(checkpoint, frames[i:i + batch_size]).data
           for i in range(0, len(frames), batch_size)]
    return np.concatenate(out, axis=0)


def predict(checkpoint, frames) -> np.ndarray:
    """Argmax class per motion; ties resolve to the lowest class index."""
    return np.argmax(predict_logits(checkpoint, frames), axis=1)


# -- training / evaluation --------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.002
    seed: int = 0
    weight_decay: float = 0.01      # L2 penalty on weight matrices, not biases
    lr_schedule: str = "cosine"     # or "constant"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError("lr_schedule must be 'cosine' or 'constant'")

    def epoch_lr(self, epoch: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))


def _stack(motions):
    return (np.stack([m.frames for m in motions]),
            np.array([m.label for m in motions], dtype=int))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ag.scale(ag.tsum(ag.mul(ag.log_softmax(logits, axis=-1), onehot)), -1.0 / len(labels))


def train(arch: str, dataset, config: TrainConfig | None = None, class_count=None) -> ModelCheckpoint:
    """Fit ``arch`` on the training split with Adam on softmax cross-entropy.

    ``loss_history`` in the metadata is the minimized objective per epoch (mean
    batch cross-entropy plus the weight-decay penalty at the epoch's end);
    ``ce_history`` holds the cross-entropy part alone.
    """
    config = config or TrainConfig()
    train_set = dataset.train if hasattr(dataset, "train") else list(dataset)
    x, y = _stack(train_set)
    k = class_count or (len(dataset.class_names) if hasattr(dataset, "class_names") else int(y.max()) + 1)
    ckpt = new_checkpoint(arch, k, config.seed)
    params = dict(ckpt.params)
    states = {n: AdamState.zeros_like(v, lr=config.lr, beta1=0.9, beta2=0.999, eps=1e-8)
              for n, v in params.items()}
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A1]))
    history, ce_history = [], []
    for epoch in range(config.epochs):
        lr = config.epoch_lr(epoch)
        states = {n: replace(st, lr=lr) for n, st in states.items()}
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            leaves = {n: Tensor(v, requires_grad=True) for n, v in params.items()}
            loss = cross_entropy(forward(ckpt, x[idx], leaves), y[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
            ag.backward(loss)
            total += float(loss.data) * len(idx)
            for n, leaf in leaves.items():
                g = leaf.grad
                if config.weight_decay and params[n].ndim > 1:
                    g = g + config.weight_decay * params[n]
                params[n], states[n] = adam_step(params[n], g, states[n])
        penalty = 0.5 * config.weight_decay * sum(float((v ** 2).sum())
                                                  for v in params.values() if v.ndim > 1)
        ce_history.append(total / len(x))
        history.append(total / len(x) + penalty)
    meta = {"seed": config.seed, "epochs": config.epochs, "lr": config.lr,
            "batch_size": config.batch_size, "weight_decay": config.weight_decay,
            "lr_schedule": config.lr_schedule, "loss_history": history,
            "ce_history": ce_history}
    out = ModelCheckpoint(arch, k, params, meta)
    out.metadata["train_accuracy"] = evaluate(out, train_set)["accuracy"]
    if hasattr(dataset, "test") and dataset.test:
        out.metadata["test_accuracy"] = evaluate(out, dataset.test)["accuracy"]
    return out


def evaluate(checkpoint: ModelCheckpoint, motions) -> dict:
    x, y = _stack(motions)
    pred = predict(checkpoint, x)
    k = checkpoint.class_count
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (y, pred), 1)
    return {"accuracy": float(np.mean(pred == y)), "confusion": confusion.tolist(),
            "predictions": pred.tolist(), "count": int(len(y))}


# -- checkpoint files --------------------------------------------------------------

MAGIC = b"SMARTCKP"


def checkpoint_to_bytes(ckpt: ModelCheckpoint) -> bytes:
    arch = ckpt.architecture_id.encode()
    parts = [MAGIC, struct.pack("<IH", CHECKPOINT_FORMAT_VERSION, len(arch)), arch,
             struct.pack("<II", ckpt.class_count, len(ckpt.params))]
    for name, arr in ckpt.params.items():
        nb = name.encode()
        parts.append(struct.pack("<HB", len(nb), arr.ndim) + nb)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in ckpt.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def checkpoint_from_bytes(blob: bytes) -> ModelCheckpoint:
    if len(blob) < len(MAGIC) + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    try:
        pos = len(MAGIC)
        version, alen = struct.unpack_from("<IH", body, pos)
        pos += 6
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        arch = body[pos:pos + alen].decode()
        pos += alen
        if arch not in ARCHITECTURES:
            raise CheckpointError(f"unknown architecture {arch!r}")
        k, count = struct.unpack_from("<II", body, pos)
        pos += 8
        table = []
        for _ in range(count):
            nlen, ndim = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos:pos + nlen].decode()
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            table.append((name, shape))
        params = {}
        for name, shape in table:
            n = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
        (mlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + mlen].decode())
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return ModelCheckpoint(arch, k, params, meta)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return checkpoint_from_bytes(blob)
