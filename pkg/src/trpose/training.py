"""Optimization loop: Adam on the weighted quadratic pose loss with
early stopping on validation loss and best-checkpoint return."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import torch
from torch.utils.data import DataLoader, Dataset

from .geometry import DEFAULT_WEIGHTS, LossWeights
from .model import PoseRegressor, pose_loss, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, (tr, vl, sec) in enumerate(zip(self.train_losses, self.val_losses,
                                                  self.epoch_seconds), start=1):
                writer.writerow([i, repr(tr), repr(vl), f"{sec:.3f}"])


class EarlyStopping:
    """Stop when the watched loss has not improved for `patience` epochs."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record one epoch's loss; True when it improved on the best."""
        if value < self.best:
            self.best = value
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def _run_validation(model: PoseRegressor, loader: DataLoader,
                    weights: LossWeights) -> float:
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for x, target in loader:
            loss = pose_loss(model(x), target, weights)
            total += float(loss) * len(x)
            count += len(x)
    model.train()
    return total / count


def train(model: PoseRegressor, train_set: Dataset, val_set: Dataset,
          config: TrainConfig, *, weights: LossWeights = DEFAULT_WEIGHTS,
          checkpoint_path: str | None = None,
          val_evaluator: Callable[[PoseRegressor, int], float] | None = None,
          log: Callable[[str], None] | None = None) -> tuple[PoseRegressor, TrainReport]:
    """Adam updates on the weighted pose loss; stops early on stale
    validation loss and returns the best-validation state (not the last).

    `val_evaluator` replaces the internal validation pass when given (used to
    exercise the stopping contract in isolation).  A checkpoint is written on
    every validation improvement when `checkpoint_path` is set.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must both be nonempty")
    gen = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(train_set, batch_size=config.batch_size,
                              shuffle=True, generator=gen)
    val_loader = DataLoader(val_set, batch_size=config.batch_size)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=(config.adam_beta1, config.adam_beta2),
                                 eps=config.adam_epsilon)
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best_state = None

    model.train()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        count = 0
        for batch_idx, (x, target) in enumerate(train_loader):
            optimizer.zero_grad()
            loss = pose_loss(model(x), target, weights)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite training loss {value} at epoch {epoch}, "
                    f"batch {batch_idx}")
            loss.backward()
            optimizer.step()
            model.steps += 1
            total += value * len(x)
            count += len(x)

        if val_evaluator is not None:
            val_loss = float(val_evaluator(model, epoch))
        else:
            val_loss = _run_validation(model, val_loader, weights)
        if not math.isfinite(val_loss):
            raise RuntimeError(f"non-finite validation loss {val_loss} at epoch {epoch}")

        report.train_losses.append(total / count)
        report.val_losses.append(val_loss)
        report.epoch_seconds.append(time.perf_counter() - t0)
        report.stopped_epoch = epoch

        if stopper.update(val_loss):
            report.best_epoch = epoch
            report.best_val_loss = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
        if log is not None:
            log(f"epoch {epoch}: train {report.train_losses[-1]:.6f} "
                f"val {val_loss:.6f}{' *' if report.best_epoch == epoch else ''}")
        if stopper.should_stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    return model, report
