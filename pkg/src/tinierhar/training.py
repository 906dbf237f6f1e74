"""AdamW training with plateau LR decay, early stopping and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .data import WindowedDataset
from .errors import ConfigurationError, IntegrityError, VersionError
from .metrics import macro_f1
from .models import Model, ModelSpec, build_model
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    early_stop_patience: int = 15
    lr: float = 1e-3
    lr_factor: float = 0.1
    lr_patience: int = 7
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 64
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.seeds = [int(s) for s in self.seeds]
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be at least 1")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ConfigurationError("patience values must be at least 1")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_factor < 1:
            raise ConfigurationError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigurationError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigurationError("eps must be positive and weight_decay non-negative")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown training option(s) {unknown}")
        return cls(**d)


# optimiser ----------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def decays(name: str, value: np.ndarray) -> bool:
    """Weight decay applies to weight matrices and kernels, never to biases or batch norm."""
    return value.ndim >= 2


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: OptimizerState,
    cfg: TrainConfig,
    lr: Optional[float] = None,
) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    A missing gradient is treated as zero.
    """
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay and decays(name, theta):
            theta -= lr * cfg.weight_decay * theta
        theta -= step


# protocol state machines ----------------------------------------------------------

@dataclass
class PlateauState:
    """Multiply lr by ``factor`` after ``patience`` consecutive non-improving epochs."""

    lr: float
    factor: float = 0.1
    patience: int = 7
    best: float = -math.inf
    bad: int = 0

    def step(self, metric: float) -> float:
        if not math.isfinite(metric):
            raise ConfigurationError(f"monitored metric must be finite, got {metric}")
        if metric > self.best:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


@dataclass
class EarlyStopState:
    patience: int = 15
    best: float = -math.inf
    bad: int = 0

    def step(self, metric: float) -> bool:
        """Record an epoch's metric; ``True`` means stop."""
        if not math.isfinite(metric):
            raise ConfigurationError(f"monitored metric must be finite, got {metric}")
        if metric > self.best:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def plateau_step(state: PlateauState, metric: float) -> float:
    return state.step(metric)


def early_stop(state: EarlyStopState, metric: float) -> bool:
    return state.step(metric)


# history and checkpoints -------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    lr: float


@dataclass
class History:
    rows: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = -math.inf
    stopped_early: bool = False
    diverged: Optional[str] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_f1", "lr"])
        for r in self.rows:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_f1), repr(r.lr)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "stopped_early": self.stopped_early,
            "diverged": self.diverged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "History":
        return cls(
            [EpochRecord(**r) for r in d["rows"]],
            d["best_epoch"],
            d["best_val_f1"],
            d["stopped_early"],
            d["diverged"],
        )


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: Dict[str, np.ndarray]
    buffers: Dict[str, Tuple[np.ndarray, np.ndarray]]
    history: History
    seed: int
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, history: History, seed: int, metadata: Optional[dict] = None) -> "Checkpoint":
        return cls(
            model.spec,
            {k: t.data.copy() for k, t in model.named_parameters().items()},
            {k: (s.mean.copy(), s.var.copy()) for k, s in model.named_buffers().items()},
            history,
            seed,
            dict(metadata or {}),
        )

    def to_model(self) -> Model:
        model = build_model(self.spec, self.seed)
        named = model.named_parameters()
        if set(named) != set(self.params):
            raise IntegrityError("checkpoint parameters do not match the model registry")
        for k, t in named.items():
            if t.data.shape != self.params[k].shape:
                raise IntegrityError(f"checkpoint tensor {k} has shape {self.params[k].shape}, expected {t.data.shape}")
            t.data[...] = self.params[k]
        for k, stats in model.named_buffers().items():
            stats.mean[...], stats.var[...] = self.buffers[k]
        return model


CHECKPOINT_MAGIC = b"HARC"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHQ32s")  # magic, version, payload length, sha256(payload)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays: List[np.ndarray] = []
    tensors = []
    for name, value in ckpt.params.items():
        tensors.append({"name": name, "kind": "param", "shape": list(value.shape)})
        arrays.append(value)
    for name, (mean, var) in ckpt.buffers.items():
        tensors.append({"name": name, "kind": "buffer", "shape": list(mean.shape)})
        arrays.extend([mean, var])
    meta = {
        "spec": ckpt.spec.to_dict(),
        "seed": ckpt.seed,
        "history": ckpt.history.to_dict(),
        "metadata": ckpt.metadata,
        "tensors": tensors,
    }
    meta_raw = json.dumps(meta).encode("utf-8")
    payload = b"".join(
        [struct.pack("<I", len(meta_raw)), meta_raw]
        + [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    )
    header = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(payload), hashlib.sha256(payload).digest())
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise IntegrityError(f"{path}: truncated checkpoint header")
    magic, version, length, digest = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    payload = raw[_CKPT_HEADER.size :]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupt)")
    (meta_len,) = struct.unpack_from("<I", payload, 0)
    meta = json.loads(payload[4 : 4 + meta_len].decode("utf-8"))
    pos = 4 + meta_len
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
        return arr

    for t in meta["tensors"]:
        if t["kind"] == "param":
            params[t["name"]] = take(t["shape"])
        else:
            buffers[t["name"]] = (take(t["shape"]), take(t["shape"]))
    return Checkpoint(
        ModelSpec.from_dict(meta["spec"]),
        params,
        buffers,
        History.from_dict(meta["history"]),
        meta["seed"],
        meta["metadata"],
    )


# training loop ----------------------------------------------------------------------

def predict(model: Model, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for every window."""
    out = [model.forward(Tensor(windows[i : i + batch_size]), training=False).data for i in range(0, len(windows), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.classes))


def evaluate_f1(model: Model, ds: WindowedDataset) -> float:
    if len(ds) == 0:
        return 0.0
    return macro_f1(predict(model, ds.windows).argmax(axis=1), ds.labels, ds.num_classes)


def _check_data(spec: ModelSpec, parts: Sequence[Optional[WindowedDataset]]) -> None:
    for name, ds in zip(("train", "validation", "test"), parts):
        if ds is None:
            continue
        if ds.num_classes != spec.classes:
            raise ConfigurationError(f"{name} data has {ds.num_classes} classes, model expects {spec.classes}")
        if len(ds) and ds.channels != spec.channels:
            raise ConfigurationError(f"{name} data has {ds.channels} channels, model expects {spec.channels}")


def train(
    spec: ModelSpec,
    data: Tuple[WindowedDataset, WindowedDataset, Optional[WindowedDataset]],
    cfg: TrainConfig,
    seed: int,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[Checkpoint, History]:
    """Train from a seeded initialisation and return the best-validation checkpoint.

    Initialisation draws from ``default_rng(seed)``; the mini-batch shuffle
    uses an independent stream derived from the same seed. A non-finite loss
    stops the run and is recorded in ``history.diverged``.
    """
    train_ds, val_ds, test_ds = data
    _check_data(spec, (train_ds, val_ds, test_ds))
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ConfigurationError("training and validation partitions must be nonempty")

    model = build_model(spec, seed)
    named = model.named_parameters()
    params = {k: t.data for k, t in named.items()}
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    opt = OptimizerState()
    plateau = PlateauState(cfg.lr, cfg.lr_factor, cfg.lr_patience)
    stopper = EarlyStopState(cfg.early_stop_patience)
    history = History()
    best = Checkpoint.from_model(model, history, seed)
    x_all = train_ds.windows
    y_all = train_ds.labels

    for epoch in range(1, cfg.epochs + 1):
        lr = plateau.lr
        order = shuffle_rng.permutation(len(train_ds))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with Tape() as tape:
                loss = F.cross_entropy(model.forward(Tensor(x_all[idx]), training=True), y_all[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    history.diverged = f"non-finite loss {value} at epoch {epoch}, batch starting {start}"
                    break
                tape.backward(loss)
            adamw_step(params, {k: t.grad for k, t in named.items()}, opt, cfg, lr)
            model.zero_grad()
            total += value * len(idx)
            seen += len(idx)
        if history.diverged:
            logger.warning("run diverged: %s", history.diverged)
            break
        val_f1 = evaluate_f1(model, val_ds)
        record = EpochRecord(epoch, total / seen, val_f1, lr)
        history.rows.append(record)
        if progress:
            progress(record)
        if val_f1 > history.best_val_f1:
            history.best_val_f1 = val_f1
            history.best_epoch = epoch
            best = Checkpoint.from_model(model, history, seed)
        plateau.step(val_f1)
        if stopper.step(val_f1):
            history.stopped_early = True
            break

    best.history = history
    best.metadata = {"best_epoch": history.best_epoch, "best_val_f1": history.best_val_f1, "train_config": cfg.to_dict()}
    if test_ds is not None and len(test_ds) and history.best_epoch:
        best.metadata["test_f1"] = evaluate_f1(best.to_model(), test_ds)
    return best, history


def validation_split(train_ds: WindowedDataset, seed: int) -> Tuple[WindowedDataset, WindowedDataset]:
    """Hold out one seeded-random training subject as the validation partition.

    With a single subject, a seeded 20% of its windows is held out instead.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A1]))
    subjects = train_ds.subjects()
    if len(subjects) >= 2:
        held = subjects[int(rng.integers(len(subjects)))]
        mask = train_ds.subject_ids == held
        return train_ds.subset(np.flatnonzero(~mask)), train_ds.subset(np.flatnonzero(mask))
    perm = rng.permutation(len(train_ds))
    n_val = max(1, len(train_ds) // 5)
    return train_ds.subset(np.sort(perm[n_val:])), train_ds.subset(np.sort(perm[:n_val]))
