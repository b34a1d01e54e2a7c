"""Training for the three deployment modes.

S-to-S trains one autoencoder on the pooled cell data; M-to-M trains one
autoencoder per task; S-to-M jointly trains a shared encoder with per-task
decoders, then (step two) a task classifier on the frozen encoder's codes.

All three modes run through one joint trainer.  Each optimizer step draws one
batch per task and minimizes the uniform task average of per-sample squared
reconstruction errors, so a single task reduces exactly to plain MSE training
and the three modes coincide at T=1 (bitwise, given equal seeds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import ArchSpec, build_decoder, build_encoder, build_gatenet
from .nn import AdamState, Network, adam_step
from .seeding import (DOMAIN_BATCH_STREAM, DOMAIN_DECODER_INIT,
                      DOMAIN_ENCODER_INIT, DOMAIN_GATE_INIT,
                      DOMAIN_GATE_STREAM, DOMAIN_SPLIT, rng_from)

MODES = ("s2s", "m2m", "s2m")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, label: str = ""):
        super().__init__(f"training loss became non-finite at epoch {epoch}"
                         + (f" ({label})" if label else ""))
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 100
    batch_size: int = 128
    patience: int = 20
    seed: int = 0
    split: tuple[float, float, float] = (0.85, 0.10, 0.05)

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.patience < 0 or self.patience >= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs)")


@dataclass
class TaskData:
    """One task's normalized tensors plus its frozen train/val/test split."""

    tensors: np.ndarray          # (N, n_tx, n_c, 2) float32
    task_id: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n(self) -> int:
        return self.tensors.shape[0]


@dataclass
class TrainResult:
    history: list[tuple[float, float]]   # (train loss, val loss) per epoch
    best_epoch: int
    best_val: float


@dataclass
class ModeBundle:
    mode: str
    spec: ArchSpec
    n_tasks: int
    encoders: list[Network]
    decoders: list[Network]
    gatenet: Network | None = None


def make_split(n: int, split, seed: int, task_id: int):
    """Shuffled train/val/test index arrays for one task."""
    rng = rng_from(seed, DOMAIN_SPLIT, task_id)
    perm = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def make_task_data(tensors: np.ndarray, task_id: int, cfg: TrainConfig) -> TaskData:
    tr, va, te = make_split(tensors.shape[0], cfg.split, cfg.seed, task_id)
    return TaskData(tensors=tensors, task_id=task_id,
                    train_idx=tr, val_idx=va, test_idx=te)


def pool_tasks(tasks: list[TaskData]) -> TaskData:
    """Concatenate tasks into one pooled task, preserving split membership."""
    if len(tasks) == 1:
        return tasks[0]
    tensors = np.concatenate([t.tensors for t in tasks], axis=0)
    offs = np.cumsum([0] + [t.n for t in tasks])
    tr = np.concatenate([t.train_idx + o for t, o in zip(tasks, offs)])
    va = np.concatenate([t.val_idx + o for t, o in zip(tasks, offs)])
    te = np.concatenate([t.test_idx + o for t, o in zip(tasks, offs)])
    return TaskData(tensors=tensors, task_id=0, train_idx=tr, val_idx=va,
                    test_idx=te)


class _BatchStream:
    """Endless stream of fixed-size index batches; reshuffles every pass."""

    def __init__(self, indices: np.ndarray, batch_size: int, rng):
        self.indices = indices
        self.batch_size = batch_size
        self.rng = rng
        self._queue = np.empty(0, dtype=np.int64)

    def next_batch(self) -> np.ndarray:
        while self._queue.size < self.batch_size:
            self._queue = np.concatenate(
                [self._queue, self.rng.permutation(self.indices)])
        batch, self._queue = (self._queue[:self.batch_size],
                              self._queue[self.batch_size:])
        return batch


def build_bundle(mode: str, spec: ArchSpec, n_tasks: int,
                 with_gatenet: bool = False) -> ModeBundle:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "s2s":
        encs = [build_encoder(spec, "encoder")]
        decs = [build_decoder(spec, "decoder")]
    elif mode == "m2m":
        encs = [build_encoder(spec, f"encoder_{k}") for k in range(1, n_tasks + 1)]
        decs = [build_decoder(spec, f"decoder_{k}") for k in range(1, n_tasks + 1)]
    else:
        encs = [build_encoder(spec, "encoder")]
        decs = [build_decoder(spec, f"decoder_{k}") for k in range(1, n_tasks + 1)]
    gate = None
    if with_gatenet:
        gate = build_gatenet(spec.code_len, n_tasks)
    return ModeBundle(mode=mode, spec=spec, n_tasks=n_tasks, encoders=encs,
                      decoders=decs, gatenet=gate)


def batch_mtl_loss(encoder: Network, decoders: list[Network],
                   batches: list[np.ndarray]) -> float:
    """Uniform task average of mean per-sample squared errors (eval mode)."""
    total = 0.0
    for dec, xb in zip(decoders, batches):
        code, _ = encoder.forward(xb, mode="eval")
        out, _ = dec.forward(code, mode="eval")
        diff = (out - xb).astype(np.float64)
        total += float((diff ** 2).sum()) / xb.shape[0]
    return total / len(decoders)


def _validation_loss(encoder, decoders, tasks, batch_size) -> float:
    total = 0.0
    for dec, task in zip(decoders, tasks):
        acc = 0.0
        idx = task.val_idx
        for i in range(0, idx.size, batch_size):
            xb = task.tensors[idx[i:i + batch_size]]
            code, _ = encoder.forward(xb, mode="eval")
            out, _ = dec.forward(code, mode="eval")
            acc += float(((out - xb).astype(np.float64) ** 2).sum())
        total += acc / max(idx.size, 1)
    return total / len(decoders)


def train_joint(encoder: Network, decoders: list[Network],
                tasks: list[TaskData], cfg: TrainConfig,
                slot_offset: int = 0, label: str = "") -> TrainResult:
    """Step-one trainer shared by all three modes.

    ``slot_offset`` shifts the seed slots for encoder/decoder initialization
    and batch streams; independent M-to-M task trainings pass their task
    position so that every task's run is a pure function of (seed, slot).
    """
    if len(decoders) != len(tasks):
        raise ValueError("one decoder per task required")
    n_tasks = len(tasks)
    encoder.init_params(rng_from(cfg.seed, DOMAIN_ENCODER_INIT, slot_offset))
    for j, dec in enumerate(decoders):
        dec.init_params(rng_from(cfg.seed, DOMAIN_DECODER_INIT, slot_offset + j))
    streams = [_BatchStream(t.train_idx, cfg.batch_size,
                            rng_from(cfg.seed, DOMAIN_BATCH_STREAM, slot_offset + j))
               for j, t in enumerate(tasks)]
    enc_adam = AdamState.for_params(encoder.params.flat)
    dec_adams = [AdamState.for_params(d.params.flat) for d in decoders]

    steps = max(1, math.ceil(max(t.train_idx.size for t in tasks) / cfg.batch_size))
    history: list[tuple[float, float]] = []
    best_val = math.inf
    best_epoch = -1
    best_snap = None
    stall = 0

    for epoch in range(cfg.max_epochs):
        epoch_loss = 0.0
        for _ in range(steps):
            enc_grads = encoder.params.zeros_like()
            step_loss = 0.0
            for j, (dec, task, stream) in enumerate(zip(decoders, tasks, streams)):
                xb = task.tensors[stream.next_batch()]
                code, ecache = encoder.forward(xb, mode="train")
                out, dcache = dec.forward(code, mode="train")
                diff = out - xb
                step_loss += float((diff.astype(np.float64) ** 2).sum()) \
                    / (xb.shape[0] * n_tasks)
                grad_out = diff * (2.0 / (xb.shape[0] * n_tasks))
                dgrads, dcode = dec.backward(dcache, grad_out)
                egrads, _ = encoder.backward(ecache, dcode)
                enc_grads.flat += egrads.flat
                adam_step(dec.params.flat, dgrads.flat, dec_adams[j], cfg.lr)
            adam_step(encoder.params.flat, enc_grads.flat, enc_adam, cfg.lr)
            if not math.isfinite(step_loss):
                raise TrainingDiverged(epoch, label)
            epoch_loss += step_loss
        val = _validation_loss(encoder, decoders, tasks, cfg.batch_size)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch, label)
        history.append((epoch_loss / steps, val))
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_snap = (encoder.snapshot(), [d.snapshot() for d in decoders])
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    if best_snap is not None:
        encoder.restore(best_snap[0])
        for dec, snap in zip(decoders, best_snap[1]):
            dec.restore(snap)
    return TrainResult(history=history, best_epoch=best_epoch, best_val=best_val)


def train_s2s(tasks: list[TaskData], bundle: ModeBundle,
              cfg: TrainConfig) -> TrainResult:
    """One autoencoder on the pooled dataset."""
    if bundle.mode != "s2s":
        raise ValueError("bundle mode must be s2s")
    pooled = pool_tasks(tasks)
    return train_joint(bundle.encoders[0], bundle.decoders, [pooled], cfg,
                       label="s2s")


def train_m2m(tasks: list[TaskData], bundle: ModeBundle,
              cfg: TrainConfig) -> list[TrainResult]:
    """T independent autoencoders, task k seeing only its own data."""
    if bundle.mode != "m2m":
        raise ValueError("bundle mode must be m2m")
    results = []
    for j, task in enumerate(tasks):
        results.append(train_joint(bundle.encoders[j], [bundle.decoders[j]],
                                   [task], cfg, slot_offset=j,
                                   label=f"m2m task {task.task_id}"))
    return results


def train_s2m_joint(tasks: list[TaskData], bundle: ModeBundle,
                    cfg: TrainConfig) -> TrainResult:
    """Step one of the shared-encoder mode: joint multi-task training."""
    if bundle.mode != "s2m":
        raise ValueError("bundle mode must be s2m")
    return train_joint(bundle.encoders[0], bundle.decoders, tasks, cfg,
                       label="s2m")


def encode_tasks(encoder: Network, tasks: list[TaskData], which: str,
                 batch_size: int = 256):
    """Frozen-encoder codes and labels for one split across all tasks."""
    codes, labels = [], []
    for j, task in enumerate(tasks):
        idx = getattr(task, f"{which}_idx")
        codes.append(encoder.predict(task.tensors[idx], batch_size))
        labels.append(np.full(idx.size, j, dtype=np.int64))
    return np.concatenate(codes), np.concatenate(labels)


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(p, 1e-12)).mean())


def train_gatenet(bundle: ModeBundle, tasks: list[TaskData],
                  cfg: TrainConfig) -> TrainResult:
    """Step two: classify the task from the code, encoder frozen.

    Training pairs are (code, one-hot task) pooled over all tasks; the split
    reuses the autoencoder's split boundaries so no training sample leaks
    into the classifier's test set.  Minimizes categorical cross-entropy.
    """
    if bundle.mode != "s2m":
        raise ValueError("gatenet training requires an s2m bundle")
    if len(tasks) < 2:
        raise ValueError("task classification needs at least two tasks")
    if bundle.gatenet is None:
        bundle.gatenet = build_gatenet(bundle.spec.code_len, len(tasks))
    gate = bundle.gatenet
    encoder = bundle.encoders[0]

    x_train, y_train = encode_tasks(encoder, tasks, "train")
    x_val, y_val = encode_tasks(encoder, tasks, "val")
    gate.init_params(rng_from(cfg.seed, DOMAIN_GATE_INIT))
    stream = _BatchStream(np.arange(x_train.shape[0]), cfg.batch_size,
                          rng_from(cfg.seed, DOMAIN_GATE_STREAM))
    adam = AdamState.for_params(gate.params.flat)
    steps = max(1, math.ceil(x_train.shape[0] / cfg.batch_size))

    history = []
    best_val = math.inf
    best_epoch = -1
    best_snap = None
    stall = 0
    for epoch in range(cfg.max_epochs):
        epoch_loss = 0.0
        for _ in range(steps):
            bidx = stream.next_batch()
            xb, yb = x_train[bidx], y_train[bidx]
            probs, cache = gate.forward(xb, mode="train")
            epoch_loss += _cross_entropy(probs, yb)
            # d(mean NLL)/d(probs): -1/(B*p) at the true class
            dprobs = np.zeros_like(probs)
            rows = np.arange(yb.size)
            dprobs[rows, yb] = -1.0 / (np.maximum(probs[rows, yb], 1e-12)
                                       * yb.size)
            grads, _ = gate.backward(cache, dprobs)
            adam_step(gate.params.flat, grads.flat, adam, cfg.lr)
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, "gatenet")
        val_probs = gate.predict(x_val)
        val = _cross_entropy(val_probs, y_val)
        history.append((epoch_loss / steps, val))
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_snap = gate.snapshot()
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    if best_snap is not None:
        gate.restore(best_snap)
    return TrainResult(history=history, best_epoch=best_epoch, best_val=best_val)


def infer(bundle: ModeBundle, tensors: np.ndarray,
          oracle_tasks: np.ndarray | None = None,
          batch_size: int = 256):
    """Reconstruct a batch; returns (reconstruction, predicted task indices).

    S-to-M routes each code to the decoder picked by the classifier (argmax,
    ties to the lowest index) unless oracle task indices are given.  M-to-M
    requires oracle task indices (the deployed UE knows its own region).
    Task indices are 0-based decoder positions.
    """
    n = tensors.shape[0]
    if bundle.mode == "s2s":
        codes = bundle.encoders[0].predict(tensors, batch_size)
        return bundle.decoders[0].predict(codes, batch_size), None
    if bundle.mode == "m2m":
        if oracle_tasks is None:
            raise ValueError("m2m inference needs task indices")
        recon = np.empty_like(tensors)
        for j in range(bundle.n_tasks):
            mask = oracle_tasks == j
            if not mask.any():
                continue
            codes = bundle.encoders[j].predict(tensors[mask], batch_size)
            recon[mask] = bundle.decoders[j].predict(codes, batch_size)
        return recon, oracle_tasks
    codes = bundle.encoders[0].predict(tensors, batch_size)
    if oracle_tasks is not None:
        routed = np.asarray(oracle_tasks)
    else:
        if bundle.gatenet is None:
            raise RuntimeError("s2m inference needs a trained classifier or "
                               "oracle task labels")
        probs = bundle.gatenet.predict(codes, batch_size)
        routed = probs.argmax(axis=1)
    recon = np.empty_like(tensors)
    for j in range(bundle.n_tasks):
        mask = routed == j
        if mask.any():
            recon[mask] = bundle.decoders[j].predict(codes[mask], batch_size)
    return recon, routed
