"""Chroma attenuation and centre-weighted spatial windowing of adversarial noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatchError
from .image import (
    YUV,
    NoiseField,
    RgbImage,
    YuvImage,
    clip_unit,
    noise_rgb_to_yuv,
    rgb_to_yuv,
    yuv_to_rgb,
)

# Kernel standard deviation used on 299x299 images.
REFERENCE_SIGMA = 190.0
REFERENCE_SIZE = 299


def default_sigma(width: int, height: int) -> float:
    """Keep the reference sigma-to-size ratio at other resolutions."""
    return REFERENCE_SIGMA / REFERENCE_SIZE * min(width, height)


@dataclass(frozen=True, eq=False)
class GaussianMask:
    width: int
    height: int
    sigma: float
    values: np.ndarray


@dataclass(frozen=True)
class ShapeConfig:
    alpha: float = 1.0
    sigma: float | None = None  # None: default_sigma for the image at hand

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def mask_for(self, width: int, height: int) -> GaussianMask:
        sigma = self.sigma if self.sigma is not None else default_sigma(width, height)
        return make_mask(width, height, sigma)


def make_mask(width: int, height: int, sigma: float) -> GaussianMask:
    """Peak-normalised Gaussian the size of the image, centred on it.

    The centre sits at ``((width - 1) / 2, (height - 1) / 2)``, so even sizes
    peak between pixels and no pixel reaches exactly 1.
    """
    if width < 1 or height < 1:
        raise ValueError("mask dimensions must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    dy = np.arange(height) - cy
    dx = np.arange(width) - cx
    # Separable form keeps the two mirror symmetries exact.
    values = np.outer(np.exp(-dy * dy / (2.0 * sigma * sigma)), np.exp(-dx * dx / (2.0 * sigma * sigma)))
    values.setflags(write=False)
    return GaussianMask(width, height, float(sigma), values)


def shape_noise(noise: NoiseField, cfg: ShapeConfig, mask: GaussianMask) -> NoiseField:
    """Scale U and V by alpha, then window all three planes by the mask."""
    if noise.domain != YUV:
        raise DomainError(f"expected YUV noise, got {noise.domain}")
    if (mask.height, mask.width) != noise.shape:
        raise ShapeMismatchError(f"mask {mask.height}x{mask.width} does not match noise {noise.shape}")
    scale = np.array([1.0, cfg.alpha, cfg.alpha])[:, None, None]
    return NoiseField(mask.values[None, :, :] * (scale * noise.data), YUV)


def compose_yuv(img: RgbImage, noise: NoiseField, cfg: ShapeConfig, mask: GaussianMask) -> YuvImage:
    """Adversarial image in YUV before conversion back to RGB and clipping."""
    if img.shape != noise.shape:
        raise ShapeMismatchError(f"image {img.shape} and noise {noise.shape} differ")
    shaped = shape_noise(noise_rgb_to_yuv(noise), cfg, mask)
    return YuvImage(rgb_to_yuv(img).data + shaped.data)


def compose_adversarial(img: RgbImage, noise: NoiseField, cfg: ShapeConfig, mask: GaussianMask) -> RgbImage:
    return clip_unit(yuv_to_rgb(compose_yuv(img, noise, cfg, mask)))
