"""Iterative magnitude pruning with best-validation rewinding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, ImageDataset
from .errors import ConfigurationError
from .nn.models import Model
from .nn.train import EpochRecord, TrainConfig, evaluate_accuracy, train


@dataclass
class Snapshot:
    epoch: int
    state: dict
    val_accuracy: float


@dataclass
class IMPConfig:
    rounds: int = 24
    prune_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ConfigurationError("prune_fraction must lie in (0, 1)")


@dataclass
class IMPRound:
    round: int
    surviving: int
    prunable: int
    nonzero_pct: float
    val_accuracy: float | None
    test_accuracy: float | None
    best_epoch: int
    state: dict
    masks: dict

    @property
    def surviving_fraction(self) -> float:
        return self.surviving / self.prunable


def prunable_parameters(model: Model):
    """Prunable parameters sorted by name (the global tie-break order)."""
    return sorted(((n, p) for n, p in model.named_parameters() if p.prunable), key=lambda t: t[0])


def current_masks(model: Model) -> dict[str, np.ndarray]:
    return {n: (p.mask.copy() if p.mask is not None else np.ones(p.shape, dtype=bool))
            for n, p in prunable_parameters(model)}


def global_magnitude_prune(model: Model, fraction: float | None = None, *,
                           count: int | None = None) -> dict[str, np.ndarray]:
    """Mask the smallest-magnitude surviving weights across all prunable tensors.

    Removes ``floor(fraction * surviving)`` weights, or exactly ``count`` if
    given. Ties in magnitude are broken by tensor name, then flat index.
    Masks are installed on the parameters and returned.
    """
    params = prunable_parameters(model)
    masks = current_masks(model)
    mags, tensor_rank, flat_idx = [], [], []
    for rank, (name, p) in enumerate(params):
        alive = np.flatnonzero(masks[name])
        mags.append(np.abs(p.value.reshape(-1)[alive]))
        tensor_rank.append(np.full(alive.size, rank))
        flat_idx.append(alive)
    mags = np.concatenate(mags) if mags else np.zeros(0)
    surviving = mags.size
    if surviving == 0:
        raise ConfigurationError("no surviving prunable weights")
    if count is None:
        if fraction is None or not 0.0 < fraction < 1.0:
            raise ConfigurationError("fraction must lie in (0, 1)")
        count = int(np.floor(fraction * surviving))
    if not 0 <= count <= surviving:
        raise ConfigurationError(f"cannot prune {count} of {surviving} surviving weights")
    tensor_rank = np.concatenate(tensor_rank)
    flat_idx = np.concatenate(flat_idx)
    order = np.lexsort((flat_idx, tensor_rank, mags))[:count]
    for rank, idx in zip(tensor_rank[order], flat_idx[order]):
        masks[params[rank][0]].reshape(-1)[idx] = False
    for name, p in params:
        p.set_mask(masks[name])
    return masks


def surviving_count(model: Model) -> tuple[int, int]:
    """(surviving, total) over prunable parameters."""
    params = prunable_parameters(model)
    return sum(p.nonzero_count() for _, p in params), sum(p.size for _, p in params)


def record_best_snapshot(history) -> Snapshot:
    """Snapshot with maximal validation accuracy; ties go to the earliest epoch.

    ``history`` is a sequence of :class:`Snapshot` (or objects with ``epoch``,
    ``val_accuracy`` and ``state``).
    """
    history = list(history)
    if not history:
        raise ConfigurationError("empty history")
    best = history[0]
    for snap in history[1:]:
        if snap.val_accuracy > best.val_accuracy:
            best = snap
    return Snapshot(best.epoch, best.state, best.val_accuracy)


class BestSnapshotTracker:
    """Training hook keeping a copy of the parameters at the best validation epoch."""

    def __init__(self):
        self.best: Snapshot | None = None

    def __call__(self, record: EpochRecord, model: Model) -> None:
        # without validation data the latest epoch wins
        acc = record.val_accuracy
        if acc is None:
            self.best = Snapshot(record.epoch, model.state_dict(), np.nan)
        elif self.best is None or acc > self.best.val_accuracy:
            self.best = Snapshot(record.epoch, model.state_dict(), acc)


def rewind(model: Model, snapshot: Snapshot) -> Model:
    """Restore snapshot values bit-exactly, then zero the currently masked positions."""
    model.load_state_dict(snapshot.state)
    for p in model.parameters():
        p.apply_mask()
    return model


def train_with_rewind(model, train_set, val_set, config: TrainConfig, augment=None):
    """Train, then rewind to the best-validation epoch. Returns (history, snapshot)."""
    tracker = BestSnapshotTracker()
    history = train(model, train_set, val_set, config, augment=augment, on_epoch=tracker)
    if tracker.best is None:
        snap = Snapshot(-1, model.state_dict(), np.nan)
    else:
        snap = tracker.best
        rewind(model, snap)
    return history, snap


def imp_run(model: Model, train_set: ImageDataset, val_set: ImageDataset | None,
            config: IMPConfig, *, test_set: ImageDataset | None = None,
            augment: AugmentConfig | None = None) -> list[IMPRound]:
    """Train, then repeat ``rounds`` times: prune, retrain the survivors.

    After each training the weights are rewound to the best-validation epoch;
    that rewound model is both the round's result and the starting point of
    the next pruning. Each round restarts the full learning-rate schedule with
    fresh momentum buffers. Round ``k`` keeps ``round(P * (1-f)^k)`` of the
    ``P`` prunable weights, so rounding never accumulates across rounds.
    """
    from .butterfly import count_model_params

    _, total_prunable = surviving_count(model)
    rounds = []
    for k in range(config.rounds + 1):
        if k > 0:
            target = int(round(total_prunable * (1.0 - config.prune_fraction) ** k))
            alive, _ = surviving_count(model)
            global_magnitude_prune(model, count=alive - target)
        _, snap = train_with_rewind(model, train_set, val_set, config.train, augment)
        alive, _ = surviving_count(model)
        rounds.append(IMPRound(
            round=k,
            surviving=alive,
            prunable=total_prunable,
            nonzero_pct=count_model_params(model).percentage,
            val_accuracy=None if np.isnan(snap.val_accuracy) else snap.val_accuracy,
            test_accuracy=evaluate_accuracy(model, test_set) if test_set is not None else None,
            best_epoch=snap.epoch,
            state=model.state_dict(),
            masks=current_masks(model),
        ))
    return rounds
