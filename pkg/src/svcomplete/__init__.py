"""Point cloud completion from self-projected depth views.

A partial scan is encoded twice (hierarchical point features and a small
CNN over its own depth projections), fused into one shape code, decoded
to a coarse complete cloud, and refined twice by a dual-path offset
generator that balances learned priors against self-similar geometry
copied from the input.
"""

from .config import ModelConfig, RunConfig, TrainConfig, profile
from .model import CompletionModel, complete_cloud, load_model, save_model
from .tensor import Adam, Tensor, grad_check

__all__ = [
    "Adam",
    "CompletionModel",
    "ModelConfig",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "complete_cloud",
    "grad_check",
    "load_model",
    "profile",
    "save_model",
]
