"""Forgery detection from patch-wise amplitude/phase spectra and shallow style features.

Everything runs on a small numpy reverse-mode autodiff core (:mod:`mclcr.tensor`).
"""

from .model import ModelConfig, ModelState, forward, forward_batch, init_model, prepare_inputs
from .train import TrainConfig, evaluate, load_dataset, train

__version__ = "0.1.0"

__all__ = ["ModelConfig", "ModelState", "TrainConfig", "evaluate", "forward", "forward_batch",
           "init_model", "load_dataset", "prepare_inputs", "train"]
