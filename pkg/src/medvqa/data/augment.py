"""Training-time image augmentation.

Each transform fires independently with its own probability; the output is
always clipped back to [0, 1]. All randomness comes from the caller's
generator, so a fixed seed reproduces augmentations bit for bit.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    brightness_contrast_delta: float = 0.05
    brightness_contrast_prob: float = 0.4
    translate_rotate_magnitude: float = 5.0  # pixels of shift, degrees of rotation
    translate_rotate_prob: float = 0.5
    gaussian_blur_prob: float = 0.5
    gaussian_noise_prob: float = 0.4
    noise_sigma: float = 0.02  # fraction of the [0, 1] dynamic range
    blur_kernel: int = 5
    blur_sigma: float = 1.0
    # Pretraining-only extras (SimCLR-style); scale bounds of the random
    # resized crop, disabled when None.
    crop_scale: tuple[float, float] | None = None

    def __post_init__(self):
        for name in (
            "brightness_contrast_prob",
            "translate_rotate_prob",
            "gaussian_blur_prob",
            "gaussian_noise_prob",
        ):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.brightness_contrast_delta < 0 or self.translate_rotate_magnitude < 0:
            raise ValueError("deltas and magnitudes must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def zeroed(self) -> "AugmentConfig":
        """Copy with every transform probability set to 0 (identity pipeline)."""
        return replace(
            self,
            brightness_contrast_prob=0.0,
            translate_rotate_prob=0.0,
            gaussian_blur_prob=0.0,
            gaussian_noise_prob=0.0,
            crop_scale=None,
        )


# SimCLR-flavoured variant for contrastive pretraining: stronger crops and
# intensity jitter, no horizontal flip (medical laterality matters).
PRETRAIN_AUGMENT = AugmentConfig(
    brightness_contrast_delta=0.20,
    brightness_contrast_prob=0.8,
    translate_rotate_prob=0.0,
    gaussian_blur_prob=0.5,
    gaussian_noise_prob=0.4,
    noise_sigma=0.05,
    crop_scale=(0.6, 1.0),
)


def _random_resized_crop(image: np.ndarray, scale: tuple[float, float], rng) -> np.ndarray:
    h, w = image.shape[:2]
    area_frac = rng.uniform(scale[0], scale[1])
    side = np.sqrt(area_frac)
    ch, cw = max(1, int(round(h * side))), max(1, int(round(w * side)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    crop = image[top : top + ch, left : left + cw]
    zoom = (h / ch, w / cw, 1.0)
    return ndimage.zoom(crop, zoom, order=1, mode="nearest", grid_mode=True)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the configured transforms to one HxWx3 image in [0, 1]."""
    out = np.asarray(image, dtype=np.float32)

    if cfg.crop_scale is not None:
        out = _random_resized_crop(out, cfg.crop_scale, rng)

    if cfg.brightness_contrast_prob > 0 and rng.random() < cfg.brightness_contrast_prob:
        d = cfg.brightness_contrast_delta
        brightness = 1.0 + rng.uniform(-d, d)
        contrast = 1.0 + rng.uniform(-d, d)
        out = (out * brightness - 0.5) * contrast + 0.5

    if cfg.translate_rotate_prob > 0 and rng.random() < cfg.translate_rotate_prob:
        m = cfg.translate_rotate_magnitude
        dy, dx = rng.uniform(-m, m, size=2)
        angle = rng.uniform(-m, m)
        out = ndimage.shift(out, (dy, dx, 0.0), order=1, mode="nearest")
        out = ndimage.rotate(out, angle, axes=(1, 0), reshape=False, order=1, mode="nearest")

    if cfg.gaussian_blur_prob > 0 and rng.random() < cfg.gaussian_blur_prob:
        radius = cfg.blur_kernel // 2
        out = ndimage.gaussian_filter(
            out, sigma=(cfg.blur_sigma, cfg.blur_sigma, 0.0), truncate=radius / cfg.blur_sigma
        )

    if cfg.gaussian_noise_prob > 0 and rng.random() < cfg.gaussian_noise_prob:
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape).astype(np.float32)

    return np.clip(out, 0.0, 1.0).astype(np.float32)
