"""Semantic-preserving patch augmentations.

The family: small integer translations, axis reflections, right-angle
rotations, anisotropic per-axis scaling, intensity shift and scale,
additive Gaussian noise, and Bernoulli pixel masking. Geometry is applied
first (one combined resampling pass with reflective padding), then the
intensity operations, then a final clamp to [0, 1].

With the identity configuration every step short-circuits, so the output
array equals the input bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage

from ..errors import ContractViolation


@dataclass(frozen=True)
class AugmentationConfig:
    max_translation: int = 2
    allow_reflections: bool = True
    rotation_set: tuple[int, ...] = (0, 90, 180, 270)
    scale_range: tuple[float, float] = (0.9, 1.1)
    intensity_shift_range: tuple[float, float] = (-0.1, 0.1)
    intensity_scale_range: tuple[float, float] = (0.9, 1.1)
    noise_sigma: float = 0.05
    mask_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("scale_range", "intensity_shift_range", "intensity_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractViolation(f"{name} is not well-ordered: ({lo}, {hi})")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ContractViolation(f"mask_fraction must be in [0, 1), got {self.mask_fraction}")
        if self.max_translation < 0:
            raise ContractViolation("max_translation must be >= 0")
        if self.noise_sigma < 0:
            raise ContractViolation("noise_sigma must be >= 0")
        for deg in self.rotation_set:
            if deg % 90 != 0:
                raise ContractViolation(f"rotation_set entries must be multiples of 90, got {deg}")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(
            max_translation=0,
            allow_reflections=False,
            rotation_set=(0,),
            scale_range=(1.0, 1.0),
            intensity_shift_range=(0.0, 0.0),
            intensity_scale_range=(1.0, 1.0),
            noise_sigma=0.0,
            mask_fraction=0.0,
        )


def augment(patch: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """One random draw from the augmentation family; same shape as the input.

    Deterministic given the generator state. Intensities are clamped to
    [0, 1] at the end, matching the range contract of patches.
    """
    if not np.all(np.isfinite(patch)):
        raise ContractViolation("patch contains non-finite values")
    out = np.asarray(patch, dtype=np.float64)
    ndim = out.ndim

    # right-angle rotation in one axis plane
    k = int(rng.integers(0, len(cfg.rotation_set)))
    quarter_turns = (cfg.rotation_set[k] // 90) % 4
    if quarter_turns:
        planes = list(combinations(range(ndim), 2))
        plane = planes[int(rng.integers(0, len(planes)))]
        out = np.rot90(out, k=quarter_turns, axes=plane)
        if out.shape != patch.shape:
            # non-square plane: undo rather than change shape
            out = np.rot90(out, k=-quarter_turns, axes=plane)

    if cfg.allow_reflections:
        for axis in range(ndim):
            if rng.random() < 0.5:
                out = np.flip(out, axis=axis)

    scales = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], size=ndim)
    if cfg.max_translation > 0:
        shifts = rng.integers(-cfg.max_translation, cfg.max_translation + 1, size=ndim)
    else:
        shifts = np.zeros(ndim, dtype=int)
    if np.any(scales != 1.0) or np.any(shifts != 0):
        # inverse map: sample input at (out - center)/scale + center - shift
        grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in out.shape], indexing="ij")
        coords = []
        for axis, g in enumerate(grids):
            center = (out.shape[axis] - 1) / 2.0
            coords.append((g - center) / scales[axis] + center - shifts[axis])
        out = ndimage.map_coordinates(out, coords, order=1, mode="reflect")

    shift = rng.uniform(*cfg.intensity_shift_range)
    scale = rng.uniform(*cfg.intensity_scale_range)
    if scale != 1.0 or shift != 0.0:
        out = out * scale + shift

    if cfg.noise_sigma > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape)

    if cfg.mask_fraction > 0:
        keep = rng.random(out.shape) >= cfg.mask_fraction
        out = out * keep

    return np.clip(out, 0.0, 1.0)
