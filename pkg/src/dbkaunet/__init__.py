"""Dual-branch Kolmogorov-Arnold U-Net for retinal vessel segmentation, in numpy."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .network import ABLATIONS, DBKAUNet, NetworkConfig, build_model, composite_loss

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "DBKAUNet", "NetworkConfig", "TrainConfig", "build_model", "composite_loss",
    "load_checkpoint", "save_checkpoint",
]
