"""Learned Koopman linearization of two-body and circular restricted three-body orbits."""

from .datagen import Cr3bpDataConfig, Dataset, TwoBodyDataConfig
from .dynamics import Cr3bpParams, GravParams, OrbitSpec, StateVector, Trajectory
from .koopman import KoopmanModel, LossWeights, TrainConfig, load_model, predict, save_model, train

__all__ = [
    "Cr3bpDataConfig",
    "Cr3bpParams",
    "Dataset",
    "GravParams",
    "KoopmanModel",
    "LossWeights",
    "OrbitSpec",
    "StateVector",
    "Trajectory",
    "TrainConfig",
    "TwoBodyDataConfig",
    "load_model",
    "predict",
    "save_model",
    "train",
]
__version__ = "0.1.0"
