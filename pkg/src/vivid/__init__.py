"""Coarse-to-fine face hallucination and frontalization at desk scale.

A 16x16 face goes through a coarse STN-aligned upsampler, a per-component
touch-up stage that builds an appearance prior, and a fine network whose
attention block fuses face features with landmark heatmaps.
"""

from .config import ABLATIONS, RunConfig
from .datapipe import ComponentSet, DegradationConfig, FacePair, load_dataset, save_dataset, synth_pair
from .errors import CheckpointError, ConfigError, DataError, InputError, NumericalError, VividError
from .evaluator import MetricsReport, evaluate, psnr, ssim
from .model import ModelConfig, VividModel
from .trainer import TrainConfig, Trainer, TrainReport, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "CheckpointError",
    "ComponentSet",
    "ConfigError",
    "DataError",
    "DegradationConfig",
    "FacePair",
    "InputError",
    "MetricsReport",
    "ModelConfig",
    "NumericalError",
    "RunConfig",
    "TrainConfig",
    "TrainReport",
    "Trainer",
    "VividError",
    "VividModel",
    "evaluate",
    "load_checkpoint",
    "psnr",
    "save_checkpoint",
    "ssim",
    "synth_pair",
]
