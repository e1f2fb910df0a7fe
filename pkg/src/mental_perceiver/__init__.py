"""Category-prior-guided latent attention classifier for interview screening."""

from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    DataError,
    MentalPerceiverError,
    NumericalError,
)
from .kernels import BACKEND
from .model import ClassWiseOutput, MentalPerceiver, ModelConfig
from .priors import CategoryPriorPair
from .trainer import Checkpoint, TrainConfig, train

__version__ = "0.1.0"
