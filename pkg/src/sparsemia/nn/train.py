"""Mini-batch training loop and accuracy evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..data import AugmentConfig, ImageDataset, augment_batch
from ..errors import ConfigurationError
from .losses import cross_entropy
from .models import Model
from .optim import SGD, lr_at_epoch


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    initial_lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.005
    lr_drop_epochs: list = field(default_factory=lambda: [150, 225])
    lr_drop_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigurationError("epochs must be >= 0 and batch_size > 0")
        if self.initial_lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("initial_lr must be positive; momentum and weight_decay >= 0")
        drops = list(self.lr_drop_epochs)
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigurationError("lr_drop_epochs must be strictly increasing")
        if drops and (drops[0] <= 0 or drops[-1] >= max(self.epochs, 1)):
            raise ConfigurationError("lr_drop_epochs must lie inside (0, epochs)")
        self.lr_drop_epochs = drops

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float | None


def evaluate_accuracy(model: Model, dataset: ImageDataset, batch_size: int = 1024) -> float:
    """Top-1 accuracy in percent; argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise ConfigurationError("cannot evaluate accuracy on an empty dataset")
    logits = model.predict_logits(dataset.images, batch_size)
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


def train(
    model: Model,
    train_set: ImageDataset,
    val_set: ImageDataset | None,
    config: TrainConfig,
    *,
    augment: AugmentConfig | None = None,
    on_epoch: Callable[[EpochRecord, Model], None] | None = None,
) -> list[EpochRecord]:
    """Train ``model`` in place with SGD and cross-entropy; return per-epoch history.

    The batch order is reshuffled every epoch from ``config.seed``; the same
    generator drives augmentation, so runs are reproducible end to end.
    Masks on parameters are honoured by the optimizer.
    """
    n = len(train_set)
    if n == 0:
        raise ConfigurationError("training set is empty")
    rng = np.random.default_rng(config.seed)
    opt = SGD(model.parameters(), config.momentum, config.weight_decay)
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        model.train()
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            if augment is not None and augment.enabled:
                x = augment_batch(x, augment, rng)
            model.zero_grad()
            logits = model.forward(x)
            loss, grad = cross_entropy(logits, y)
            model.backward(grad)
            opt.step(lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        val_acc = evaluate_accuracy(model, val_set) if val_set is not None and len(val_set) else None
        record = EpochRecord(epoch, lr, loss_sum / n, 100.0 * correct / n, val_acc)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record, model)
    model.eval()
    return history
