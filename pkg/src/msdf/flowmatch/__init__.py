"""Flow-matching training and ODE sampling over set-structured tensors."""

from .model import ModelConfig, VelocityModel
from .path import CondOtPath, sample_path
from .sample import SampleResult, ShapeSample, cfg_velocity, sample, sample_to_shape
from .train import TrainConfig, train

__all__ = ["CondOtPath", "sample_path", "ModelConfig", "VelocityModel",
           "TrainConfig", "train", "SampleResult", "ShapeSample", "cfg_velocity",
           "sample", "sample_to_shape"]
