"""Region-based active learning for semantic segmentation with a
teacher-student semi-supervised trainer, confidence-weighted pseudo labels,
and class-balanced mixing."""

from .config import (AugmentConfig, CycleConfig, DataConfig, ExperimentConfig,
                     ModelConfig, TrainSchedule, load_preset)
from .datapool import (ClassDistribution, PoolState, Region, RegionGrid, Status,
                       build_region_grid, class_pixel_distribution, init_split)
from .dataset import Dataset, load_dataset, save_dataset
from .experiment import ExperimentReport, run_experiment, simulate_budget
from .metrics import ConfusionMatrix
from .models import ModelPair, SmallSegNet, ema_update, forward
from .replay import ReplayBuffer
from .synth import generate_synthetic
from .trainer import train_cycle

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ClassDistribution", "ConfusionMatrix", "CycleConfig",
    "Dataset", "DataConfig", "ExperimentConfig", "ExperimentReport",
    "ModelConfig", "ModelPair", "PoolState", "Region", "RegionGrid",
    "ReplayBuffer", "SmallSegNet", "Status", "TrainSchedule",
    "build_region_grid", "class_pixel_distribution", "ema_update", "forward",
    "generate_synthetic", "init_split", "load_dataset", "load_preset",
    "run_experiment", "save_dataset", "simulate_budget", "train_cycle",
]
