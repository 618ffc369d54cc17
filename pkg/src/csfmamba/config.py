"""Run configuration: model, training, preprocessing and split settings.

A config file is JSON with optional sections ``model``, ``train``,
``preprocess`` and ``split``; keys inside each section are the dataclass
field names.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import PreprocessConfig, SplitSpec
from .model import ModelConfig


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 5e-4
    lr_decay: float = 0.5
    decay_period: int = 50
    epochs: int = 200
    seed: int = 0
    precision: int = 32
    eval_batch_size: int = 256
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.decay_period < 1 or self.epochs < 0:
            raise ValueError("decay_period must be >= 1 and epochs >= 0")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_period)


def _build(cls, d):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(train_fraction=0.1))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"model", "train", "preprocess", "split"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        split = d.get("split", {"train_fraction": 0.1})
        train = _build(TrainConfig, d.get("train", {}))
        if "seed" not in split:
            split = {**split, "seed": train.seed}
        return cls(model=_build(ModelConfig, d.get("model", {})), train=train,
                   preprocess=_build(PreprocessConfig, d.get("preprocess", {})),
                   split=_build(SplitSpec, split))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train),
                "preprocess": self.preprocess.to_dict(), "split": self.split.to_dict()}


def desk_preset(num_classes: int = 4) -> RunConfig:
    """Tiny model and short schedule for synthetic scenes."""
    return RunConfig.from_dict({
        "model": {"patch_size": 5, "c1": 8, "c2": 5, "token_width": 8, "inner_width": 8, "state_size": 4,
                  "encoder_layers": 1, "fusion_layers": 1, "num_classes": num_classes},
        "train": {"batch_size": 32, "lr": 5e-3, "epochs": 300, "decay_period": 100, "precision": 64},
        "preprocess": {"mi_top_bands": 12, "pca_components": 8},
        "split": {"per_class_count": 16},
    })
