"""Attention-based LSTM seq2seq RUL estimation, from the autodiff up."""

from .model import ModelConfig, fit, infer, load_checkpoint, save_checkpoint
from .tensor import Tensor

__all__ = ["ModelConfig", "Tensor", "fit", "infer",
           "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
