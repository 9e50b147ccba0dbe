"""Training loop with best-dev-epoch selection.

The model state returned is the one at the end of the epoch with the
highest development accuracy (earliest epoch on ties). At desk scale the
development set is the IID part of the test split.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import optim
from .nn import ModelSpec, ModelState, build_model, loss_and_grads, predict_logits
from .synth import Sample, select, split_iid_ood, stack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    optimiser: optim.OptimConfig = field(default_factory=optim.OptimConfig)
    seed: int = 42
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochLog:
    epoch: int  # 1-indexed
    train_loss: float
    train_accuracy: float  # running accuracy of the training-mode forward passes
    dev_accuracy: float


class TrainData(NamedTuple):
    x_train: np.ndarray
    y_train: np.ndarray
    x_dev: np.ndarray
    y_dev: np.ndarray


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, logs: list[EpochLog]):
        super().__init__(message)
        self.logs = logs


def prepare(samples: list[Sample]) -> TrainData:
    """Training split plus the IID test portion as the development set."""
    iid, _ = split_iid_ood(select(samples, "test"))
    return TrainData(*stack(select(samples, "train")), *stack(iid))


def best_epoch(dev_accuracies: list[float]) -> int:
    """1-indexed epoch with the highest dev accuracy; the earliest wins ties."""
    if not dev_accuracies:
        raise ValueError("no epochs")
    return int(np.argmax(dev_accuracies)) + 1


def accuracy(state: ModelState, samples) -> float:
    """Fraction of argmax-of-logits predictions that match the labels (eval mode)."""
    x, y = stack(samples) if isinstance(samples, list) else samples
    if len(y) == 0:
        raise ValueError("accuracy of an empty sample set is undefined")
    return float(np.mean(predict_logits(state, x).argmax(axis=1) == y))


def epoch_order(seed: int, epoch: int, n: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)


def train(spec: ModelSpec, data: TrainData, cfg: TrainConfig,
          on_epoch: Callable[[EpochLog], None] | None = None) -> tuple[ModelState, list[EpochLog]]:
    if len(data.y_train) == 0 or len(data.y_dev) == 0:
        raise ValueError("training needs nonempty train and dev sets")
    state = build_model(spec, cfg.seed)
    opt = optim.OptimState()
    logs: list[EpochLog] = []
    best: ModelState | None = None
    best_acc = -1.0
    n = len(data.y_train)
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_order(cfg.seed, epoch, n, cfg.shuffle)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            loss, logits, grads = loss_and_grads(state, (xb, yb), training=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss in epoch {epoch}", logs)
            try:
                optim.step(state, grads, cfg.optimiser, opt)
            except optim.NonFiniteGradient as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", logs) from exc
            loss_sum += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
        dev_acc = accuracy(state, (data.x_dev, data.y_dev))
        entry = EpochLog(epoch, loss_sum / n, correct / n, dev_acc)
        logs.append(entry)
        log.info("epoch %d loss %.4f train_acc %.4f dev_acc %.4f", epoch, entry.train_loss,
                 entry.train_accuracy, dev_acc)
        if on_epoch is not None:
            on_epoch(entry)
        if dev_acc > best_acc:
            best_acc = dev_acc
            best = state.copy()
            best.epoch = epoch
            best.metrics = {"dev_accuracy": dev_acc}
    assert best is not None
    return best, logs
