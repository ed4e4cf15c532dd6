"""Contrastive representation training at desk scale.

Patches are plain numpy arrays (2-D or 3-D, intensities in [0, 1]); the
encoder, both losses, and the straight-through sign layer carry hand-written
gradients so every analytic derivative can be checked against finite
differences.
"""

from .augment import AugmentationConfig, augment
from .encoder import (
    EncoderModel,
    binarize_model,
    encode,
    encode_batch,
    init_encoder,
    load_model,
    save_model,
)
from .losses import (
    nt_xent_loss,
    semi_hard_negatives,
    sign_layer_backward,
    sign_layer_forward,
    triplet_margin_loss,
)
from .train import LossConfig, TrainResult, train

__all__ = [
    "AugmentationConfig",
    "augment",
    "EncoderModel",
    "binarize_model",
    "encode",
    "encode_batch",
    "init_encoder",
    "load_model",
    "save_model",
    "nt_xent_loss",
    "semi_hard_negatives",
    "sign_layer_backward",
    "sign_layer_forward",
    "triplet_margin_loss",
    "LossConfig",
    "TrainResult",
    "train",
]
