"""Question-conditioned dynamic weight prediction with hashed weight sharing."""

__version__ = "0.1.0"

from .config import ModelConfig, RunConfig, TrainSchedule
from .hashing import HashSpec

__all__ = ["ModelConfig", "RunConfig", "TrainSchedule", "HashSpec", "__version__"]
