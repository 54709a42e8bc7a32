"""Loss, metrics, Adam, seeded splits and the multi-split training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, UsageError
from .model import MODEL_KINDS, QlstmConfig, init_params, sequence_backward, sequence_forward
from .noise import NoiseConfig, NoiseStream

log = logging.getLogger(__name__)

LR_SWEEP = (0.1, 0.05, 0.01, 0.005, 0.001)

# named RNG substreams derived from (global seed, split seed, stream id)
INIT_STREAM = 1
SHUFFLE_STREAM = 2
# noise phases; a NoiseStream call id is (seed, split seed, phase, step or epoch)
TRAIN_PHASE, VAL_PHASE, TRAIN_EVAL_PHASE = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    model: str = "qlstm"
    batch_size: int = 256
    epochs: int = 100
    lr: float = 0.01
    split_seeds: tuple[int, ...] = (0, 1, 2)
    val_fraction: float = 0.2
    noise: NoiseConfig | None = None
    track_train_accuracy: bool = True

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be a positive number, got {self.lr!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        seeds = tuple(int(s) for s in self.split_seeds)
        if not seeds:
            raise ConfigError("split_seeds needs at least one seed")
        object.__setattr__(self, "split_seeds", seeds)
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseConfig.from_dict(self.noise))
        if self.noise is not None and self.model != "qlstm":
            raise ConfigError("bit-flip noise applies to the qlstm model only")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["split_seeds"] = list(self.split_seeds)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config field(s): {sorted(unknown)}")
        return cls(**data)


# -- loss and metrics ---------------------------------------------------------

def _stable_bce(z, y):
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_loss(logits, labels, mask=None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over valid tasks of one sample, with its gradient."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if z.shape != y.shape:
        raise UsageError(f"logits {z.shape} and labels {y.shape} differ in shape")
    valid = np.ones(z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != z.shape:
        raise UsageError("mask shape does not match logits")
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, np.zeros_like(z)
    y = np.where(valid, y, 0.0)
    loss = float(np.sum(np.where(valid, _stable_bce(z, y), 0.0)) / n_valid)
    grad = np.where(valid, _sigmoid(z) - y, 0.0) / n_valid
    return loss, grad


def bce_batch(logits, labels, mask=None) -> tuple[float, np.ndarray, int]:
    """Batch loss: mean over samples that carry at least one valid label.

    Returns ``(loss, d_logits, n_samples_counted)``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.atleast_2d(np.asarray(labels, dtype=float))
    valid = np.ones(z.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    if z.shape != y.shape or valid.shape != z.shape:
        raise UsageError("logits, labels and mask must share a shape")
    per_count = valid.sum(axis=1)
    counted = int((per_count > 0).sum())
    if counted == 0:
        return 0.0, np.zeros_like(z), 0
    denom = np.maximum(per_count, 1)[:, None]
    y = np.where(valid, y, 0.0)
    per_sample = np.where(valid, _stable_bce(z, y), 0.0).sum(axis=1) / denom[:, 0]
    grad = np.where(valid, _sigmoid(z) - y, 0.0) / denom / counted
    return float(per_sample.sum() / counted), grad, counted


def accuracy(logits, labels, mask=None, threshold: float = 0.5, average: str = "entries") -> float:
    """Fraction of valid (sample, task) entries predicted right.

    ``average="tasks"`` instead takes each task's accuracy over its own valid
    entries and means those, skipping tasks with none.  The two agree for a
    single task.  A probability equal to the threshold predicts class 1.
    """
    if average not in ("entries", "tasks"):
        raise UsageError(f"average must be 'entries' or 'tasks', got {average!r}")
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    valid = np.ones(z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if z.shape != y.shape or valid.shape != z.shape:
        raise UsageError("logits, labels and mask must share a shape")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise UsageError("accuracy is undefined with no valid labels")
    right = ((_sigmoid(z) >= threshold) == (y >= 0.5)) & valid
    if average == "tasks":
        right2, valid2 = right.reshape(len(z), -1), valid.reshape(len(z), -1)
        per_task = valid2.sum(axis=0)
        used = per_task > 0
        return float(np.mean(right2.sum(axis=0)[used] / per_task[used]))
    return float(right.sum() / n_valid)


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p, dtype=float) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=float) for k, p in params.items()},
            **kwargs,
        )


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One bias-corrected Adam update.  ``state`` is advanced in place; new params are returned."""
    if set(grads) != set(params) or set(state.m) != set(params):
        raise UsageError("params, grads and optimizer state must share keys")
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise UsageError(f"gradient for {name} has shape {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}; step aborted")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, new_params


# -- splits -------------------------------------------------------------------

def split_dataset(table, seed: int, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle into disjoint train/validation index arrays.

    ``table`` is a dataset or a plain sample count.
    """
    n = table if isinstance(table, (int, np.integer)) else len(table)
    if n < 2:
        raise ConfigError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = int(round(n * val_fraction))
    n_val = min(max(n_val, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


# -- reports ------------------------------------------------------------------

CSV_COLUMNS = ("seed", "epoch", "train_loss", "train_accuracy", "val_accuracy", "epoch_seconds")
TIMING_COLUMNS = ("epoch_seconds",)


@dataclass
class EpochRecord:
    seed: int
    epoch: int
    train_loss: float
    train_accuracy: float | None
    val_accuracy: float
    epoch_seconds: float


@dataclass
class RunReport:
    model: str
    records: list[EpochRecord] = field(default_factory=list)
    final_val_accuracy: dict[int, float] = field(default_factory=dict)
    # same validation pass, averaged per task first; equals final_val_accuracy for one task
    final_val_accuracy_by_task: dict[int, float] = field(default_factory=dict)
    final_params: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def mean_val_accuracy(self) -> float:
        return float(np.mean(list(self.final_val_accuracy.values())))

    def curve(self, seed: int, column: str = "train_loss") -> list[float]:
        return [getattr(r, column) for r in self.records if r.seed == seed]

    def write_csv(self, path, include_timing: bool = True) -> None:
        columns = [c for c in CSV_COLUMNS if include_timing or c not in TIMING_COLUMNS]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in self.records:
                row = asdict(rec)
                writer.writerow(["" if row[c] is None else row[c] for c in columns])

    def summary(self) -> dict:
        return {
            "model": self.model,
            "final_val_accuracy": {str(k): v for k, v in self.final_val_accuracy.items()},
            "mean_val_accuracy": self.mean_val_accuracy,
            "final_val_accuracy_by_task": {str(k): v for k, v in self.final_val_accuracy_by_task.items()},
            "mean_val_accuracy_by_task": float(np.mean(list(self.final_val_accuracy_by_task.values()))),
            "epochs": max((r.epoch for r in self.records), default=0),
            "wall_seconds": sum(r.epoch_seconds for r in self.records),
        }


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- training -----------------------------------------------------------------

def predict_logits(kind, params, model_cfg: QlstmConfig, X, sample_ids=None, noise: NoiseConfig | None = None,
                   call_id: Sequence[int] = (0,), batch_size: int = 256) -> np.ndarray:
    """Logits for many fingerprints, evaluated in chunks."""
    X = np.atleast_2d(X)
    ids = np.arange(len(X)) if sample_ids is None else np.asarray(sample_ids)
    out = []
    for b, start in enumerate(range(0, len(X), batch_size)):
        sl = slice(start, start + batch_size)
        stream = None
        if noise is not None:
            stream = NoiseStream(noise, noise.eval_trajectories, tuple(call_id) + (b,))
        logits, _ = sequence_forward(kind, params, model_cfg, X[sl], stream, ids[sl])
        out.append(logits)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model_cfg.n_tasks))


def train_model(train_cfg: TrainConfig, model_cfg: QlstmConfig, dataset, seed: int = 0,
                on_epoch: Callable[[EpochRecord], None] | None = None) -> RunReport:
    """Train from scratch once per split seed and collect curves and final accuracies."""
    X = np.asarray(dataset.fingerprints, dtype=float)
    Y = np.asarray(dataset.labels, dtype=float)
    M = np.asarray(dataset.mask, dtype=bool)
    if X.shape[1] != model_cfg.fp_bits:
        raise ConfigError(f"dataset fingerprints have {X.shape[1]} bits, model expects {model_cfg.fp_bits}")
    if Y.shape[1] != model_cfg.n_tasks:
        raise ConfigError(f"dataset has {Y.shape[1]} tasks, model expects {model_cfg.n_tasks}")
    kind = train_cfg.model
    noise = train_cfg.noise
    report = RunReport(model=kind)

    for split_seed in train_cfg.split_seeds:
        tr, va = split_dataset(len(X), split_seed, train_cfg.val_fraction)
        init_rng = np.random.default_rng([seed, split_seed, INIT_STREAM])
        shuffle_rng = np.random.default_rng([seed, split_seed, SHUFFLE_STREAM])
        params = init_params(kind, model_cfg, init_rng)
        adam = AdamState.zeros_like(params)
        step = 0

        def evaluate(idx, phase, epoch, average="entries"):
            logits = predict_logits(kind, params, model_cfg, X[idx], idx, noise,
                                    (seed, split_seed, phase, epoch), train_cfg.batch_size)
            return accuracy(logits, Y[idx], M[idx], average=average)

        for epoch in range(1, train_cfg.epochs + 1):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(tr)
            loss_sum, counted_sum = 0.0, 0
            for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
                idx = order[start:start + train_cfg.batch_size]
                stream = None
                if noise is not None:
                    stream = NoiseStream(noise, noise.trajectories, (seed, split_seed, TRAIN_PHASE, step))
                logits, cache = sequence_forward(kind, params, model_cfg, X[idx], stream, idx)
                loss, d_logits, counted = bce_batch(logits, Y[idx], M[idx])
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at split seed {split_seed}, epoch {epoch}, batch {b}"
                    )
                grads = sequence_backward(params, cache, d_logits)
                adam, params = adam_step(adam, params, grads, train_cfg.lr)
                loss_sum += loss * counted
                counted_sum += counted
                step += 1
            train_loss = loss_sum / max(counted_sum, 1)
            val_acc = evaluate(va, VAL_PHASE, epoch)
            train_acc = evaluate(tr, TRAIN_EVAL_PHASE, epoch) if train_cfg.track_train_accuracy else None
            rec = EpochRecord(split_seed, epoch, train_loss, train_acc, val_acc,
                              time.perf_counter() - t0)
            report.records.append(rec)
            log.info("seed %d epoch %d loss %.4f val_acc %.4f", split_seed, epoch, train_loss, val_acc)
            if on_epoch is not None:
                on_epoch(rec)

        last = train_cfg.epochs
        report.final_val_accuracy[split_seed] = (
            report.records[-1].val_accuracy if last > 0 else evaluate(va, VAL_PHASE, 0)
        )
        if model_cfg.n_tasks == 1:
            report.final_val_accuracy_by_task[split_seed] = report.final_val_accuracy[split_seed]
        else:
            # the same noise call id regenerates the last validation pass exactly
            report.final_val_accuracy_by_task[split_seed] = evaluate(va, VAL_PHASE, last, average="tasks")
        report.final_params[split_seed] = params
    return report
