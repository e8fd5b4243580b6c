"""Thermal crack-severity classification at desk scale: synthetic
radiometric data, thermal/visible fusion, and a from-scratch CNN."""

from .dataset import CrackLevel, classify_delta_t
from .imaging import ThermalField, alpha_fuse, compute_delta_t
from .metrics import ConfusionMatrix, compute_metrics
from .model import ArchitectureSpec, TrainConfig, build_network, predict, train

__all__ = [
    "ArchitectureSpec",
    "ConfusionMatrix",
    "CrackLevel",
    "ThermalField",
    "TrainConfig",
    "alpha_fuse",
    "build_network",
    "classify_delta_t",
    "compute_delta_t",
    "compute_metrics",
    "predict",
    "train",
]

__version__ = "0.1.0"
