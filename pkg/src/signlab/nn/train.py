"""Minibatch SGD training, evaluation and finite-difference gradient checks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from ..augment import AugmentationPolicy
from ..dataset import N_CLASSES
from ..errors import ConfigError, SignLabError
from ..rng import SplitMix64, derive_seed
from .data import EmptySplit, FrameSet
from .layers import softmax, softmax_cross_entropy
from .layers import MaxPool2, ReLU
from .model import Model, set_trainable_fraction

log = logging.getLogger(__name__)

SCHEDULES = ("auto", "baseline", "two-phase")


class DivergedLoss(SignLabError):
    pass


class EmptySet(ConfigError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation schedule.

    ``two-phase`` trains the fusion head alone for ``phase1_epochs`` and then
    unfreezes ``unfreeze_fraction`` of every stream for ``phase2_epochs``.
    ``baseline`` trains everything for ``baseline_epochs``.  ``auto`` picks
    two-phase for multi-stream models and baseline otherwise.
    """

    phase1_epochs: int = 20
    phase1_lr: float = 1e-3
    phase2_epochs: int = 20
    phase2_lr: float = 1e-6
    unfreeze_fraction: float = 0.6
    freeze_mode: str = "layers"
    baseline_epochs: int = 25
    baseline_lr: float = 1e-2
    batch_size: int = 128
    momentum: float = 0.0
    schedule: str = "auto"
    seed: int = 0

    def __post_init__(self):
        for name in ("phase1_epochs", "phase2_epochs", "baseline_epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("phase1_lr", "phase2_lr", "baseline_lr"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.unfreeze_fraction <= 1.0:
            raise ConfigError("unfreeze_fraction must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config fields: {sorted(extra)}")
        return cls(**d)

    def phases(self, kind: str) -> list[tuple[str, int, float, Optional[float]]]:
        """(phase name, epochs, learning rate, trainable fraction) in order."""
        schedule = self.schedule
        if schedule == "auto":
            schedule = "two-phase" if kind == "multi-stream" else "baseline"
        if schedule == "baseline":
            return [("baseline", self.baseline_epochs, self.baseline_lr, 1.0)]
        return [("phase1", self.phase1_epochs, self.phase1_lr, 0.0),
                ("phase2", self.phase2_epochs, self.phase2_lr, self.unfreeze_fraction)]


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    per_class_recall: list

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "per_class_recall": [None if math.isnan(r) else r for r in self.per_class_recall]}


def confusion_result(y_true: Sequence[int], y_pred: Sequence[int],
                     n_classes: int = N_CLASSES) -> EvalResult:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise EmptySet("cannot evaluate an empty frame set")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    rows = conf.sum(axis=1)
    recall = [float(conf[i, i] / rows[i]) if rows[i] else math.nan for i in range(n_classes)]
    return EvalResult(float(np.trace(conf) / conf.sum()), conf, recall)


def predict_logits(model: Model, data: FrameSet, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        out.append(model.forward(data.inputs(idx, model.spec, model.dtype)))
    return np.concatenate(out, axis=0)


def evaluate(model: Model, data: FrameSet, batch_size: int = 256) -> EvalResult:
    """Argmax accuracy and confusion matrix; ties go to the lowest class id."""
    if len(data) == 0:
        raise EmptySet("cannot evaluate an empty frame set")
    logits = predict_logits(model, data, batch_size)
    return confusion_result(data.labels, logits.argmax(axis=1), model.spec.n_classes)


class SGD:
    """Plain SGD with optional heavy-ball momentum, touching trainable layers only."""

    def __init__(self, model: Model, momentum: float = 0.0):
        self.model = model
        self.momentum = momentum
        self.velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self, lr: float) -> None:
        for lname, layer in self.model.named_layers():
            if not layer.trainable:
                continue
            for pname, p in layer.params.items():
                g = layer.grads[pname].astype(p.dtype, copy=False)
                if self.momentum:
                    key = (lname, pname)
                    v = self.velocity.get(key)
                    v = g.copy() if v is None else self.momentum * v + g
                    self.velocity[key] = v
                    g = v
                p -= p.dtype.type(lr) * g


def train(model: Model, train_set: FrameSet, config: TrainConfig,
          policy: Optional[AugmentationPolicy] = None,
          test_set: Optional[FrameSet] = None) -> list[dict]:
    """Train in place and return one history row per epoch."""
    if len(train_set) == 0:
        raise EmptySplit("no training frames")
    history: list[dict] = []
    opt = SGD(model, config.momentum)
    n = len(train_set)
    epoch = 0
    for phase, epochs, lr, fraction in config.phases(model.kind):
        set_trainable_fraction(model, fraction, config.freeze_mode)
        opt.velocity.clear()
        for _ in range(epochs):
            order = list(range(n))
            SplitMix64(derive_seed(config.seed, epoch)).shuffle(order)
            loss_sum, correct = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = train_set.inputs(idx, model.spec, model.dtype, policy, config.seed, epoch)
                labels = train_set.labels[idx]
                logits = model.forward(batch)
                loss, dlogits = softmax_cross_entropy(logits, labels)
                if not math.isfinite(loss) or not np.all(np.isfinite(logits)):
                    raise DivergedLoss(
                        f"non-finite loss in {phase} epoch {epoch} batch {start // config.batch_size}"
                        f" (lr={lr}, loss={loss})")
                model.backward(dlogits)
                opt.step(lr)
                loss_sum += loss * len(idx)
                correct += int(np.sum(logits.argmax(axis=1) == labels))
            row = {"epoch": epoch, "phase": phase, "train_loss": loss_sum / n,
                   "train_acc": correct / n,
                   "test_acc": evaluate(model, test_set).accuracy if test_set and len(test_set) else None}
            log.debug("epoch %d %s loss=%.4f acc=%.4f", epoch, phase, row["train_loss"], row["train_acc"])
            history.append(row)
            epoch += 1
    return history


HISTORY_FIELDS = ("epoch", "phase", "train_loss", "train_acc", "test_acc")


def write_history_csv(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in HISTORY_FIELDS])


def _loss(model: Model, batch: dict, labels) -> float:
    return softmax_cross_entropy(model.forward(batch), labels)[0]


def _activation_pattern(model: Model) -> bytes:
    """ReLU masks and max-pool winners from the most recent forward pass."""
    parts = []
    for stream in list(model.streams.values()) + [model.head]:
        for layer in stream.layers:
            if isinstance(layer, ReLU):
                parts.append(np.packbits(layer._mask).tobytes())
            elif isinstance(layer, MaxPool2):
                parts.append(layer._cache[1].astype(np.int8).tobytes())
    return b"".join(parts)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients
    from amplifying round-off."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(model: Model, batch: dict, labels, eps: float = 1e-4,
                   n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between backprop and central differences, in float64.

    Checks a seeded random subsample of ``n_coords`` parameter coordinates
    (all of them if the model is smaller).  A coordinate whose +/-eps
    perturbation flips a ReLU or changes a max-pool winner straddles a kink
    where the loss is not differentiable; it is skipped and another one is
    drawn.  The model passed in is not modified.
    """
    m = model.astype(np.float64)
    batch = {k: np.asarray(v, dtype=np.float64) for k, v in batch.items()}
    labels = np.asarray(labels)
    _, dlogits = softmax_cross_entropy(m.forward(batch), labels)
    base_pattern = _activation_pattern(m)
    m.backward(dlogits, full=True)
    coords = [(layer, pname, j) for _, layer in m.named_layers()
              for pname, p in layer.params.items() for j in range(p.size)]
    order = np.random.default_rng(seed).permutation(len(coords))
    analytic, numeric = [], []
    for c in order:
        if len(analytic) >= n_coords:
            break
        layer, pname, j = coords[c]
        p = layer.params[pname].reshape(-1)
        orig = p[j]
        p[j] = orig + eps
        up = _loss(m, batch, labels)
        kink = _activation_pattern(m) != base_pattern
        p[j] = orig - eps
        down = _loss(m, batch, labels)
        kink = kink or _activation_pattern(m) != base_pattern
        p[j] = orig
        if kink:
            continue
        analytic.append(layer.grads[pname].reshape(-1)[j])
        numeric.append((up - down) / (2 * eps))
    if not analytic:
        raise ArithmeticError("every sampled coordinate straddled a kink")
    return float(relative_error(analytic, numeric).max())
