"""The structural language model, its hyperparameters, vocabulary and training."""

from .hyper import Hyperparams
from .network import SLM
from .vocab import Vocab

__all__ = ["Hyperparams", "SLM", "Vocab"]
