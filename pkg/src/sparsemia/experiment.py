"""Experiment configuration, the target/shadow pipeline and seed derivation."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .butterfly import count_model_params, substitute_butterfly
from .data import AugmentConfig, ImageDataset, SyntheticSpec, gen_synthetic, load_cifar10
from .errors import ConfigurationError
from .imp import IMPConfig, current_masks, imp_run, train_with_rewind
from .mia import AttackConfig, AttackResult, DataPartition, evaluate_attack, partition_dataset
from .nn.models import build_model
from .nn.train import TrainConfig, evaluate_accuracy

log = logging.getLogger(__name__)

# Stream identifiers for derive_seed. Never renumber: seeds of existing
# experiments depend on them.
STREAM_DATASET = 0
STREAM_PARTITION = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_BUTTERFLY = 4
STREAM_ATTACK = 5
ROLE_TARGET = 0
ROLE_SHADOW = 1


def derive_seed(master_seed: int, *keys: int) -> int:
    """Counter-based child seed: ``SeedSequence(master, spawn_key=keys)``.

    Experiment-wide streams use ``(stream,)``; per-trial streams use
    ``(trial, stream, role)`` or ``(trial, stream, level)``. Seeds of one
    trial do not depend on how many trials run.
    """
    return int(np.random.SeedSequence(master_seed, spawn_key=tuple(keys)).generate_state(1)[0])


# -- configuration ------------------------------------------------------------

@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticSpec(**self.synthetic)
        if self.kind not in ("synthetic", "cifar10"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "cifar10" and not self.path:
            raise ConfigurationError("cifar10 dataset needs a path")


@dataclass
class LevelConfig:
    """One sparsity mechanism: ``dense``, ``imp`` (expands to rounds 0..k) or
    ``butterfly`` (``segments`` S, ``factors`` L). ``initial_lr`` and
    ``weight_decay`` override the shared training config when set."""

    kind: str = "dense"
    rounds: int = 0
    prune_fraction: float = 0.2
    segments: int = 0
    factors: int = 2
    initial_lr: float | None = None
    weight_decay: float | None = None

    def __post_init__(self):
        if self.kind not in ("dense", "imp", "butterfly"):
            raise ConfigurationError(f"unknown sparsity kind {self.kind!r}")
        if self.kind == "butterfly" and (self.segments < 1 or self.factors < 1):
            raise ConfigurationError("butterfly level needs segments >= 1 and factors >= 1")

    def labels(self) -> list[str]:
        if self.kind == "imp":
            return [f"imp-k{k}" for k in range(self.rounds + 1)]
        if self.kind == "butterfly":
            return [f"butterfly-S{self.segments}-L{self.factors}"]
        return ["dense"]


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    subset_size: int | None = None
    val_size: int = 1000
    architecture: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [64]})
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig | None = None
    levels: list = field(default_factory=lambda: [LevelConfig()])
    attack: AttackConfig = field(default_factory=AttackConfig)
    trials: int = 3
    master_seed: int = 0
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetConfig(**self.dataset)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if isinstance(self.attack, dict):
            self.attack = AttackConfig(**self.attack)
        self.levels = [lv if isinstance(lv, LevelConfig) else LevelConfig(**lv) for lv in self.levels]
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.levels:
            raise ConfigurationError("at least one sparsity level is required")
        labels = [lab for lv in self.levels for lab in lv.labels()]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate sparsity levels: {labels}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**copy.deepcopy(d))
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack"] = self.attack.to_dict()
        return d


def load_config(path) -> ExperimentConfig:
    """Read a YAML or JSON experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(data)


PRESETS = ("desk-scale", "overfit", "paper-scale")


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")
    import yaml

    text = resources.files("sparsemia").joinpath(f"presets/{name}.yaml").read_text()
    return ExperimentConfig.from_dict(yaml.safe_load(text))


# -- pipeline -------------------------------------------------------------------

@dataclass
class TrialResult:
    level: str
    trial: int
    seed: int
    target_accuracy: float
    shadow_accuracy: float
    nonzero_pct: float
    attack: AttackResult

    def __post_init__(self):
        if isinstance(self.attack, dict):
            self.attack = AttackResult.from_dict(self.attack)

    @property
    def accuracy(self) -> float:
        return self.target_accuracy

    @property
    def defense(self) -> float:
        return self.attack.defense

    def to_dict(self) -> dict:
        return asdict(self)


def load_dataset(config: ExperimentConfig) -> ImageDataset:
    ds = config.dataset
    if ds.kind == "cifar10":
        return load_cifar10(ds.path)
    return gen_synthetic(ds.synthetic, derive_seed(config.master_seed, STREAM_DATASET))


def resolve_architecture(config: ExperimentConfig, data: ImageDataset) -> dict:
    arch = dict(config.architecture)
    arch.setdefault("input_shape", list(data.input_shape))
    arch.setdefault("num_classes", data.class_count)
    if arch.get("kind") == "resnet" and "widths" not in arch:
        w = arch.pop("width", 16)
        arch["widths"] = [w, 2 * w, 4 * w]
    return arch


def level_train_config(config: ExperimentConfig, level: LevelConfig, seed: int) -> TrainConfig:
    d = config.train.to_dict()
    if level.initial_lr is not None:
        d["initial_lr"] = level.initial_lr
    if level.weight_decay is not None:
        d["weight_decay"] = level.weight_decay
    d["seed"] = seed
    return TrainConfig(**d)


def _train_role(config, data, part: DataPartition, trial, level: LevelConfig, role: int):
    """Train one network (target or shadow); returns [(state, nonzero_pct, test_acc, masks), ...]."""
    fit_idx = part.fit_target if role == ROLE_TARGET else part.fit_shadow
    val_idx = part.val_target if role == ROLE_TARGET else part.val_shadow
    test_idx = part.test_target if role == ROLE_TARGET else part.test_shadow
    fit, test = data.subset(fit_idx), data.subset(test_idx)
    val = data.subset(val_idx) if len(val_idx) else None
    arch = resolve_architecture(config, data)
    model = build_model(arch, seed=derive_seed(config.master_seed, trial, STREAM_INIT, role))
    tcfg = level_train_config(config, level, derive_seed(config.master_seed, trial, STREAM_TRAIN, role))
    if level.kind == "butterfly":
        substitute_butterfly(model, level.segments, level.factors,
                             derive_seed(config.master_seed, trial, STREAM_BUTTERFLY, role))
    if level.kind == "imp":
        rounds = imp_run(model, fit, val, IMPConfig(level.rounds, level.prune_fraction, tcfg),
                         test_set=test, augment=config.augment)
        return model, [(r.state, r.nonzero_pct, r.test_accuracy, r.masks) for r in rounds]
    train_with_rewind(model, fit, val, tcfg, config.augment)
    return model, [(model.state_dict(), count_model_params(model).percentage,
                    evaluate_accuracy(model, test), current_masks(model))]


def run_pipeline(config: ExperimentConfig, trial: int = 0, data: ImageDataset | None = None
                 ) -> list[TrialResult]:
    """Train target and shadow identically, attack the target; one result per level.

    The partition is fixed by the master seed for all trials; initialization,
    batch order and attack randomness vary per trial. An IMP level yields one
    result per pruning round.
    """
    data = load_dataset(config) if data is None else data
    part = partition_dataset(len(data), config.subset_size, config.val_size,
                             derive_seed(config.master_seed, STREAM_PARTITION))
    results = []
    level_no = 0
    for level in config.levels:
        target, t_out = _train_role(config, data, part, trial, level, ROLE_TARGET)
        shadow, s_out = _train_role(config, data, part, trial, level, ROLE_SHADOW)
        for label, (t_state, t_pct, t_acc, _), (s_state, _, s_acc, _) in zip(level.labels(), t_out, s_out):
            target.load_state_dict(t_state)
            shadow.load_state_dict(s_state)
            seed = derive_seed(config.master_seed, trial, STREAM_ATTACK, level_no)
            attack = evaluate_attack(target, shadow, data, part, config.attack, seed)
            log.info("trial %d %s: acc %.2f nonzero %.1f%% attack %.2f", trial, label, t_acc,
                     t_pct, attack.strongest)
            results.append(TrialResult(label, trial, seed, t_acc, s_acc, t_pct, attack))
            level_no += 1
    return results


def run_experiment(config: ExperimentConfig):
    from .report import aggregate

    data = load_dataset(config)
    trials = []
    for t in range(config.trials):
        trials.extend(run_pipeline(config, t, data))
    return aggregate(trials, name=config.name, master_seed=config.master_seed,
                     config=config.to_dict())
