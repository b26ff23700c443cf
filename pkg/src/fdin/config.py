"""Model, training and run configuration with strict key checking."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

TASKS = ("regression", "classification")
BASELINES = ("none", "regional", "holistic")
VARIANTS = {
    "full": dict(use_locational=True, use_importance=True, baseline="none"),
    "no-locational": dict(use_locational=False, use_importance=True, baseline="none"),
    "no-importance": dict(use_locational=True, use_importance=False, baseline="none"),
    "no-both": dict(use_locational=False, use_importance=False, baseline="none"),
    "regional": dict(baseline="regional"),
    "holistic": dict(baseline="holistic"),
}
TASK_ALIASES = {"age": "regression", "gender": "classification",
                "age-regression": "regression", "gender-classification": "classification"}


class ConfigError(ValueError):
    pass


def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


@dataclass
class ModelConfig:
    task: str = "regression"
    n_classes: int = 2
    height: int = 6
    width: int = 6
    channels: int = 8
    grid_rows: int = 3
    grid_cols: int = 3
    encoder_dense: int = 32
    lstm_hidden: list[int] = field(default_factory=lambda: [32, 32])
    relation_hidden: list[int] = field(default_factory=lambda: [64, 64])
    estimator_hidden: list[int] = field(default_factory=lambda: [64, 32])
    dropout: float = 0.5
    use_locational: bool = True
    use_importance: bool = True
    baseline: str = "none"
    share_encoder: bool = True
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.task = TASK_ALIASES.get(self.task, self.task)
        self.lstm_hidden = [int(h) for h in self.lstm_hidden]
        self.relation_hidden = [int(h) for h in self.relation_hidden]
        self.estimator_hidden = [int(h) for h in self.estimator_hidden]
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if not self.lstm_hidden or not self.relation_hidden:
            raise ConfigError("encoder and relation networks need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.task == "classification" and self.n_classes < 2:
            raise ConfigError("classification needs at least two classes")

    @property
    def n_outputs(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    @property
    def dynamic_width(self) -> int:
        return self.lstm_hidden[-1]

    @property
    def relation_width(self) -> int:
        return self.relation_hidden[-1]

    def with_variant(self, name: str) -> "ModelConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return replace(self, **VARIANTS[name])

    def variant_name(self) -> str:
        if self.baseline != "none":
            return self.baseline
        for name, flags in VARIANTS.items():
            if flags == dict(use_locational=self.use_locational, use_importance=self.use_importance,
                             baseline="none"):
                return name
        return "custom"  # pragma: no cover

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _from_dict(cls, d, "model")

    def digest(self) -> str:
        return config_digest(self.to_dict())

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        base = dict(height=6, width=6, channels=512, encoder_dense=1024, lstm_hidden=[1024, 1024],
                    relation_hidden=[4096, 4096], estimator_hidden=[2048, 1024])
        base.update(kw)
        return cls(**base)

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        base = dict(height=2, width=2, channels=2, grid_rows=2, grid_cols=2, encoder_dense=6,
                    lstm_hidden=[8], relation_hidden=[8, 8], estimator_hidden=[6, 5])
        base.update(kw)
        return cls(**base)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "float64"
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d, "train")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    out: str | None = None
    folds: int = 0
    fold_seed: int = 0
    jobs: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(), "data": self.data,
                "out": self.out, "folds": self.folds, "fold_seed": self.fold_seed, "jobs": self.jobs}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: expected a mapping")
        unknown = set(d) - {"model", "train", "data", "out", "folds", "fold_seed", "jobs"}
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k not in ("model", "train")}
        return cls(model=ModelConfig.from_dict(d.get("model", {})),
                   train=TrainConfig.from_dict(d.get("train", {})), **kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(doc: dict) -> str:
    """sha256 over the canonical JSON encoding of ``doc``."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
