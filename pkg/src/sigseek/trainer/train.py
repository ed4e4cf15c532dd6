"""SGD training loop over augmentation pairs.

Each step draws N patches from the corpus sampler, augments every patch
twice, runs the 2N-patch batch through the encoder, and descends the
configured loss with a fixed learning rate. Everything is driven by one
seeded generator, so a (sampler, seed) pair reproduces the loss trace
exactly.

Direct binary training is gated: the sign layer from a cold start is known
to diverge, so a binarize-mode model must carry weights from a trained
real-valued model unless the caller explicitly overrides.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractViolation
from .augment import AugmentationConfig, augment
from .encoder import EncoderModel, backward_batch, forward_batch
from .losses import nt_xent_loss, triplet_batch_loss

# sampler(rng, count) -> array of shape (count, *patch_shape)
PatchSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class LossConfig:
    kind: str = "nt_xent"  # "nt_xent" or "triplet"
    temperature: float = 0.1
    margin: float = 0.2
    batch_pairs: int = 8

    def __post_init__(self):
        if self.kind not in ("nt_xent", "triplet"):
            raise ContractViolation(f"unknown loss kind {self.kind!r}")
        if self.temperature <= 0:
            raise ContractViolation("temperature must be > 0")
        if self.margin <= 0:
            raise ContractViolation("margin must be > 0")
        if self.batch_pairs < 2:
            raise ContractViolation("batch_pairs must be >= 2")


@dataclass
class TrainResult:
    model: EncoderModel
    loss_trace: list[float]


def train(
    sampler: PatchSampler,
    model: EncoderModel,
    loss_cfg: LossConfig,
    aug_cfg: AugmentationConfig,
    steps: int,
    learning_rate: float,
    seed: int,
    allow_binarize_from_scratch: bool = False,
) -> TrainResult:
    """Train a copy of ``model``; the input model is left untouched."""
    if steps < 0:
        raise ContractViolation("steps must be >= 0")
    if model.binarize and not model.pretrained and not allow_binarize_from_scratch:
        raise ContractViolation(
            "binarize-mode training requires weights initialized from a trained "
            "real-valued model; pass allow_binarize_from_scratch=True to override"
        )
    model = model.copy()
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    for _ in range(steps):
        patches = sampler(rng, loss_cfg.batch_pairs)
        batch = np.empty((2 * loss_cfg.batch_pairs,) + model.patch_shape, dtype=np.float64)
        for i, patch in enumerate(patches):
            batch[2 * i] = augment(patch, aug_cfg, rng)
            batch[2 * i + 1] = augment(patch, aug_cfg, rng)
        emb, cache = forward_batch(model, batch, want_cache=True)
        if loss_cfg.kind == "nt_xent":
            loss, demb = nt_xent_loss(emb, loss_cfg.temperature)
        else:
            loss, demb, _ = triplet_batch_loss(emb, loss_cfg.margin)
        grads = backward_batch(model, cache, demb)
        for name, g in grads.items():
            model.params[name] -= learning_rate * g
        trace.append(float(loss))
    return TrainResult(model=model, loss_trace=trace)
