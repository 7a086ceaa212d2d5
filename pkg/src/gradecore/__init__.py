"""gradecore: road-quality image classifiers built from first principles."""

from .data import AugmentConfig, Dataset, load_directory, train_test_split
from .tensor import Rng
from .training import TrainConfig, evaluate, gradient_check, train_cnn, train_mlp

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Dataset",
    "Rng",
    "TrainConfig",
    "evaluate",
    "gradient_check",
    "load_directory",
    "train_cnn",
    "train_mlp",
    "train_test_split",
    "__version__",
]
