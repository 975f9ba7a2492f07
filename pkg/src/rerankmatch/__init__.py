"""Semi-supervised classification with ranking losses on logits and a
similarity-representation feature contrastive loss, on a small numpy autodiff engine."""

from .augment import AugmentPolicy, default_policies, strong_augment, weak_augment
from .data import Dataset, SslSplit, load_idx, make_shapes, make_two_moons, split_ssl
from .estimator import ReRankMatchClassifier
from .losses import Hyperparams
from .model import ForwardOutput, ModelParams, forward, init_params

__all__ = [
    "AugmentPolicy", "Dataset", "ForwardOutput", "Hyperparams", "ModelParams",
    "ReRankMatchClassifier", "SslSplit", "default_policies", "forward", "init_params",
    "load_idx", "make_shapes", "make_two_moons", "split_ssl", "strong_augment",
    "weak_augment",
]

__version__ = "0.1.0"
