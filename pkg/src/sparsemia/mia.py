"""Shadow-model membership inference: partitions, per-point features,
discriminator grid, attack accuracy and defense score."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ImageDataset
from .errors import ConfigurationError, ShapeError
from .nn.functional import softmax
from .nn.layers import Dense, ReLU, Sequential, Sigmoid
from .nn.losses import binary_cross_entropy
from .nn.models import Model
from .nn.module import init_params
from .nn.optim import Adam


# -- partition ---------------------------------------------------------------

@dataclass
class DataPartition:
    """Index sets into the base dataset.

    ``val_target``/``val_shadow`` are subsets of the corresponding training
    sets; ``fit_target``/``fit_shadow`` are what remains and what the
    networks are actually trained on.
    """

    train_target: np.ndarray
    test_target: np.ndarray
    train_shadow: np.ndarray
    test_shadow: np.ndarray
    val_target: np.ndarray
    val_shadow: np.ndarray

    @property
    def fit_target(self) -> np.ndarray:
        return self.train_target[len(self.val_target):]

    @property
    def fit_shadow(self) -> np.ndarray:
        return self.train_shadow[len(self.val_shadow):]

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}


def partition_dataset(dataset_size: int, subset_size: int | None = None, val_size: int = 1000,
                      seed: int = 0) -> DataPartition:
    """Split ``range(dataset_size)`` uniformly at random into four equal sets.

    With ``subset_size=None`` the four sets cover the whole index range
    (``dataset_size`` must then be divisible by 4). The validation subsets are
    the first ``val_size`` entries of each (already shuffled) training set.
    """
    if subset_size is None:
        if dataset_size % 4:
            raise ConfigurationError(f"{dataset_size} points cannot be split into 4 equal sets")
        subset_size = dataset_size // 4
    if subset_size <= 0 or 4 * subset_size > dataset_size:
        raise ConfigurationError(f"cannot draw 4 sets of {subset_size} from {dataset_size} points")
    if not 0 <= val_size < subset_size:
        raise ConfigurationError(f"validation size {val_size} must be < subset size {subset_size}")
    perm = np.random.default_rng(seed).permutation(dataset_size)
    tr_t, te_t, tr_s, te_s = perm[:4 * subset_size].reshape(4, subset_size)
    return DataPartition(tr_t.copy(), te_t.copy(), tr_s.copy(), te_s.copy(),
                         tr_t[:val_size].copy(), tr_s[:val_size].copy())


# -- features ------------------------------------------------------------------

@dataclass
class AttackConfig:
    epsilon: float = 1e-3
    n_noise: int = 5
    batch_size: int = 256
    use_probabilities: bool = True
    grid: list = field(default_factory=lambda: default_grid())

    def __post_init__(self):
        if self.epsilon <= 0 or self.n_noise < 1:
            raise ConfigurationError("epsilon must be > 0 and n_noise >= 1")
        self.grid = [g if isinstance(g, DiscriminatorSpec) else DiscriminatorSpec(**g)
                     for g in self.grid]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [asdict(g) for g in self.grid]
        return d


@dataclass
class AttackSet:
    """Columnar per-point attack features.

    ``prediction`` is R(x); ``sensitivity`` is ``(1/eps) * mean_k |R(x) - R(x + eps N_k)|``
    elementwise over classes.
    """

    labels: np.ndarray
    prediction: np.ndarray
    sensitivity: np.ndarray
    membership: np.ndarray | None = None
    point_ids: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return self.prediction.shape[1]

    def features(self) -> np.ndarray:
        """One-hot class, prediction, sensitivity: shape (n, 3 * classes)."""
        onehot = np.eye(self.num_classes)[self.labels]
        return np.concatenate([onehot, self.prediction, self.sensitivity], axis=1)

    def with_membership(self, membership) -> "AttackSet":
        return AttackSet(self.labels, self.prediction, self.sensitivity,
                         np.asarray(membership, dtype=np.int64), self.point_ids)

    def save_columns(self, path) -> None:
        """Whitespace-separated text, one row per point:
        label, prediction[0..C-1], sensitivity[0..C-1], membership (-1 if unset)."""
        c = self.num_classes
        member = self.membership if self.membership is not None else -np.ones(len(self), dtype=np.int64)
        table = np.column_stack([self.labels, self.prediction, self.sensitivity, member])
        header = " ".join(["label"] + [f"pred_{i}" for i in range(c)]
                          + [f"sens_{i}" for i in range(c)] + ["membership"])
        np.savetxt(Path(path), table, fmt="%.17g", header=header)

    @classmethod
    def load_columns(cls, path) -> "AttackSet":
        table = np.atleast_2d(np.loadtxt(Path(path)))
        c = (table.shape[1] - 2) // 2
        member = table[:, -1].astype(np.int64)
        return cls(table[:, 0].astype(np.int64), table[:, 1:1 + c], table[:, 1 + c:1 + 2 * c],
                   None if (member < 0).all() else member)


def _model_output(model: Model, x: np.ndarray, use_probabilities: bool) -> np.ndarray:
    logits = model.predict_logits(x)
    return softmax(logits) if use_probabilities else logits


def extract_features(model, x: np.ndarray, labels, epsilon: float = 1e-3, n_noise: int = 5,
                     seed: int = 0, point_ids=None, use_probabilities: bool = True,
                     chunk: int = 256) -> AttackSet:
    """Prediction and local sensitivity of ``model`` at each point of ``x``.

    Noise for point ``i`` comes from a generator seeded with
    ``(seed, point_ids[i])``, so features do not depend on batching and the
    same draws are reused whatever ``epsilon`` is.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) != len(labels):
        raise ShapeError(f"{len(x)} inputs but {len(labels)} labels")
    ids = np.arange(len(x)) if point_ids is None else np.asarray(point_ids, dtype=np.int64)
    preds, sens = [], []
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        noise = np.stack([
            np.random.default_rng([seed, int(pid)]).standard_normal((n_noise,) + x.shape[1:])
            for pid in ids[start:start + chunk]
        ])
        base = _model_output(model, xb, use_probabilities)
        noisy = xb[:, None] + epsilon * noise
        out = _model_output(model, noisy.reshape((-1,) + x.shape[1:]), use_probabilities)
        out = out.reshape(len(xb), n_noise, -1)
        preds.append(base)
        sens.append(np.abs(base[:, None, :] - out).mean(axis=1) / epsilon)
    if preds:
        prediction, sensitivity = np.concatenate(preds), np.concatenate(sens)
    else:
        prediction = sensitivity = np.zeros((0, getattr(model, "num_classes", 0)))
    return AttackSet(labels, prediction, sensitivity, None, ids)


def build_attack_dataset(model, dataset: ImageDataset, member_idx, nonmember_idx,
                         config: AttackConfig, seed: int = 0) -> AttackSet:
    """Features for members (label 1) followed by non-members (label 0)."""
    member_idx = np.asarray(member_idx, dtype=np.int64)
    nonmember_idx = np.asarray(nonmember_idx, dtype=np.int64)
    if len(member_idx) == 0 or len(nonmember_idx) == 0:
        raise ConfigurationError("attack set needs members and non-members")
    if len(member_idx) != len(nonmember_idx):
        raise ConfigurationError(
            f"unbalanced attack set: {len(member_idx)} members vs {len(nonmember_idx)} non-members"
        )
    if np.intersect1d(member_idx, nonmember_idx).size:
        raise ConfigurationError("member and non-member splits overlap")
    idx = np.concatenate([member_idx, nonmember_idx])
    feats = extract_features(model, dataset.images[idx], dataset.labels[idx], config.epsilon,
                             config.n_noise, seed, idx, config.use_probabilities)
    membership = np.concatenate([np.ones(len(member_idx)), np.zeros(len(nonmember_idx))])
    return feats.with_membership(membership)


# -- discriminators ------------------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorSpec:
    hidden_layers: int
    hidden_width: int
    learning_rate: float
    epochs: int = 80


def default_grid() -> list[DiscriminatorSpec]:
    """Three perceptrons (1x30, 2x30, 3x100 hidden) times three Adam learning rates."""
    shapes = [(1, 30), (2, 30), (3, 100)]
    return [DiscriminatorSpec(h, w, lr) for h, w in shapes for lr in (0.01, 0.001, 0.0001)]


class Discriminator:
    """Perceptron with ReLU hidden layers and a sigmoid membership probability."""

    def __init__(self, spec: DiscriminatorSpec, in_features: int, seed: int):
        self.spec = spec
        layers, names = [], []
        width = in_features
        for i in range(spec.hidden_layers):
            layers += [Dense(width, spec.hidden_width), ReLU()]
            names += [f"fc{i}", f"relu{i}"]
            width = spec.hidden_width
        layers += [Dense(width, 1), Sigmoid()]
        names += ["head", "sigmoid"]
        arch = {"kind": "discriminator", **asdict(spec), "in_features": in_features}
        self.model = Model(Sequential(*layers, names=names), arch, (in_features,), 1)
        init_params(self.model, seed)
        self.seed = seed

    def fit(self, features: np.ndarray, membership: np.ndarray, batch_size: int = 256,
            epochs: int | None = None) -> list[float]:
        """Minimize binary cross-entropy with Adam (no weight decay)."""
        rng = np.random.default_rng(self.seed)
        opt = Adam(self.model.parameters())
        y = np.asarray(membership, dtype=np.float64)
        losses = []
        self.model.train()
        for _ in range(self.spec.epochs if epochs is None else epochs):
            order = rng.permutation(len(features))
            total = 0.0
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                self.model.zero_grad()
                prob = self.model.forward(features[idx])[:, 0]
                loss, grad = binary_cross_entropy(prob, y[idx])
                self.model.backward(grad[:, None])
                opt.step(self.spec.learning_rate)
                total += loss * len(idx)
            losses.append(total / len(order))
        self.model.eval()
        return losses

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return self.model.predict_logits(features)[:, 0]


def _spec_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0])


def train_discriminators(shadow_set: AttackSet, grid=None, seed: int = 0,
                         batch_size: int = 256) -> list[Discriminator]:
    """Train one discriminator per grid entry on the shadow attack set."""
    grid = default_grid() if grid is None else list(grid)
    if len(shadow_set) == 0 or shadow_set.membership is None:
        raise ConfigurationError("shadow attack set must be nonempty and labelled")
    feats = shadow_set.features()
    out = []
    for i, spec in enumerate(grid):
        disc = Discriminator(spec, feats.shape[1], _spec_seed(seed, i))
        disc.fit(feats, shadow_set.membership, batch_size)
        out.append(disc)
    return out


def attack_accuracy(discriminator, attack_set: AttackSet) -> float:
    """Percentage of correct membership guesses, guessing member when p >= 0.5."""
    if len(attack_set) == 0:
        raise ConfigurationError("empty attack set")
    guess = discriminator.predict_proba(attack_set.features()) >= 0.5
    return 100.0 * float(np.mean(guess == attack_set.membership.astype(bool)))


def defense_score(attack_acc: float) -> float:
    """``200 - 2A``: 100 for a coin-flip attacker, 0 for a perfect one."""
    if not 0.0 <= attack_acc <= 100.0:
        raise ConfigurationError(f"attack accuracy {attack_acc} outside [0, 100]")
    return 200.0 - 2.0 * attack_acc


# -- full attack -------------------------------------------------------------

@dataclass
class AttackResult:
    accuracies: list[float]
    shadow_accuracies: list[float]
    grid: list[dict]
    strongest: float
    defense: float

    @property
    def above_chance(self) -> bool:
        """False when the strongest attack is below 50%, i.e. defense exceeds 100."""
        return self.strongest >= 50.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackResult":
        return cls(**d)


def attack_splits(partition: DataPartition, role: str) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (members, non-members) for ``role`` in {"target", "shadow"}.

    Members are the effective training points (validation points excluded);
    non-members are the first equally many test points.
    """
    fit = partition.fit_target if role == "target" else partition.fit_shadow
    test = partition.test_target if role == "target" else partition.test_shadow
    n = min(len(fit), len(test))
    return fit[:n], test[:n]


def evaluate_attack(target_model, shadow_model, dataset: ImageDataset, partition: DataPartition,
                    config: AttackConfig, seed: int = 0) -> AttackResult:
    """Train the grid on the shadow model's attack set; score each on the target's."""
    seeds = np.random.SeedSequence(seed).generate_state(3)
    shadow_set = build_attack_dataset(shadow_model, dataset, *attack_splits(partition, "shadow"),
                                      config, int(seeds[0]))
    target_set = build_attack_dataset(target_model, dataset, *attack_splits(partition, "target"),
                                      config, int(seeds[1]))
    return attack_from_sets(shadow_set, target_set, config, int(seeds[2]))


def attack_from_sets(shadow_set: AttackSet, target_set: AttackSet, config: AttackConfig,
                     seed: int = 0) -> AttackResult:
    discs = train_discriminators(shadow_set, config.grid, seed, config.batch_size)
    accs = [attack_accuracy(d, target_set) for d in discs]
    shadow_accs = [attack_accuracy(d, shadow_set) for d in discs]
    strongest = max(accs)
    return AttackResult(accs, shadow_accs, [asdict(g) for g in config.grid], strongest,
                        defense_score(strongest))
