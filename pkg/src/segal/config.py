"""Experiment configuration: typed records, INI file parsing, presets, hashing.

Every hyperparameter lives in one auditable record; the canonical text form is
what gets hashed and snapshotted into run directories.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from importlib import resources

from .errors import ConfigConflictError, InvalidArgumentError


@dataclass
class DataConfig:
    dir: str = ""
    num_classes: int = 4
    ignore_index: int = 255
    # geometry used by budget dry runs when no pixel data is loaded
    train_images: int = 0
    height: int = 0
    width: int = 0

    section = "data"


@dataclass
class CycleConfig:
    """Acquisition loop shape: num_cycles acquisition rounds after the initial train."""

    num_cycles: int = 2
    per_image_k: int = 4
    region_h: int = 30
    region_w: int = 30
    metric: str = "entropy"
    initial_fraction: float = 0.1
    replay_capacity: int = 50
    seed: int = 0
    selection: str = "per_image"   # or "global"
    global_budget: int = 0

    section = "cycle"

    def validate(self) -> None:
        if self.num_cycles < 0:
            raise InvalidArgumentError("num_cycles must be >= 0")
        if self.per_image_k < 1 or self.replay_capacity < 1:
            raise InvalidArgumentError("per_image_k and replay_capacity must be >= 1")
        if not 0.0 < self.initial_fraction < 1.0:
            raise InvalidArgumentError("initial_fraction must be in (0,1)")
        if self.metric not in ("random", "least_confidence", "entropy", "margin"):
            raise InvalidArgumentError(f"unknown acquisition metric {self.metric!r}")
        if self.selection not in ("per_image", "global"):
            raise InvalidArgumentError(f"unknown selection mode {self.selection!r}")


@dataclass
class TrainSchedule:
    epochs: int = 100
    final_cycle_epochs: int = 200
    batch_size: int = 4
    lr0: float = 1e-2
    poly_power: float = 0.9
    warmup_epochs: int = 10
    confidence_threshold: float = 0.97
    ema_momentum: float = 0.99
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    steps_per_epoch: int = 0           # 0: ceil(labeled stream / batch_size)
    val_every: int = 1
    checkpoint_every: int = 25
    balanced_classmix_start_cycle: int = 1
    confidence_weighting: bool = True
    balanced_classmix: bool = True
    reinit_per_cycle: bool = True

    section = "train"

    def validate(self) -> None:
        if not 0.0 < self.confidence_threshold < 1.0:
            raise InvalidArgumentError("confidence_threshold must be in (0,1)")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise InvalidArgumentError("ema_momentum must be in [0,1]")
        if self.epochs < 1 or self.final_cycle_epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.warmup_epochs < 0:
            raise InvalidArgumentError("warmup_epochs must be >= 0")

    def epochs_for_cycle(self, cycle: int, num_cycles: int) -> int:
        return self.final_cycle_epochs if cycle == num_cycles else self.epochs


@dataclass
class AugmentConfig:
    crop_h: int = 0                    # 0: full image
    crop_w: int = 0
    scale_min: float = 0.5
    scale_max: float = 2.0
    jitter: float = 0.25
    flip_prob: float = 0.5

    section = "augment"


@dataclass
class ModelConfig:
    base_width: int = 16

    section = "model"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: DataConfig = field(default_factory=DataConfig)
    cycle: CycleConfig = field(default_factory=CycleConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        self.cycle.validate()
        self.train.validate()

    # -- canonical text, parsing, hashing ------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("[experiment]\nname = %s\n\n" % self.name)
        for part in (self.data, self.cycle, self.train, self.augment, self.model):
            out.write(f"[{part.section}]\n")
            for f in fields(part):
                out.write(f"{f.name} = {getattr(part, f.name)}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        cfg = cls()
        if parser.has_option("experiment", "name"):
            cfg.name = parser.get("experiment", "name")
        for part in (cfg.data, cfg.cycle, cfg.train, cfg.augment, cfg.model):
            if not parser.has_section(part.section):
                continue
            known = {f.name: f for f in fields(part)}
            for key, raw in parser.items(part.section):
                if key not in known:
                    raise InvalidArgumentError(
                        f"unknown config key [{part.section}] {key}")
                setattr(part, key, _coerce(raw, known[key].type, key))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())


def _coerce(raw: str, annot, key: str):
    raw = raw.strip()
    if annot in ("int", int):
        return int(raw)
    if annot in ("float", float):
        return float(raw)
    if annot in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise InvalidArgumentError(f"bad boolean {raw!r} for {key}")
    return raw


def load_preset(name: str) -> ExperimentConfig:
    """Load a shipped preset, e.g. 'camvid', 'cityscapes', or 'desk'."""
    ref = resources.files("segal").joinpath(f"presets/{name}.cfg")
    if not ref.is_file():
        raise InvalidArgumentError(f"no preset named {name!r}")
    return ExperimentConfig.from_text(ref.read_text())


def check_config_hash(cfg: ExperimentConfig, stored_digest: str) -> None:
    if cfg.digest() != stored_digest:
        raise ConfigConflictError("config does not match the one stored in the run "
                                  "directory; refusing to resume")
