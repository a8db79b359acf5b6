"""Gaussian encoders for the shape latent: point cloud -> q(z|X), image -> p(z|I)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import ParamStore, Tensor, as_tensor_like, exp, mul, sub, take, tsum
from .nets import ConvEncoder, SetEncoder

MIN_IMAGE_SIZE = 8


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent; variance stored as its natural log."""
    mean: Tensor
    log_var: Tensor

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def _split(out: Tensor, d: int) -> LatentGaussian:
    return LatentGaussian(take(out, np.arange(d)), take(out, np.arange(d, 2 * d)))


class PointEncoder:
    """Set encoder ``3 -> 64 -> 128 -> 256``, max-pool, linear head to ``2d``."""

    def __init__(self, store: ParamStore, rng: np.random.Generator, latent_dim: int,
                 widths=(64, 128, 256), prefix: str = "enc"):
        self.latent_dim = latent_dim
        self.net = SetEncoder(store, rng, prefix, 2 * latent_dim, widths)

    def __call__(self, clouds, P=None) -> LatentGaussian:
        clouds = as_tensor_like(clouds, self.net.store.dtype)
        if clouds.ndim != 3 or clouds.shape[1] == 0:
            raise ValueError(f"expected a batch of non-empty clouds (B, N, 3), got {clouds.shape}")
        return _split(self.net(clouds, P), self.latent_dim)


class ImageEncoder:
    """Strided CNN + MLP head producing ``(mean, log_var)``; any resolution >= 8."""

    def __init__(self, store: ParamStore, rng: np.random.Generator, latent_dim: int, in_channels: int = 1,
                 channels=(16, 32, 64, 128), head_hidden: int = 128, prefix: str = "enc",
                 zero_head: bool = False):
        self.latent_dim = latent_dim
        self.net = ConvEncoder(store, rng, prefix, in_channels, 2 * latent_dim, channels, head_hidden,
                               zero_head=zero_head)

    def __call__(self, images, P=None) -> LatentGaussian:
        images = as_tensor_like(images, self.net.store.dtype)
        if images.ndim != 4 or min(images.shape[1:3]) < MIN_IMAGE_SIZE:
            raise ValueError(f"expected images (B, H, W, C) with H, W >= {MIN_IMAGE_SIZE}, got {images.shape}")
        return _split(self.net(images, P), self.latent_dim)


def reparam_sample(g: LatentGaussian, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """``mean + exp(log_var / 2) * noise`` with standard-normal noise."""
    if noise is None:
        noise = rng.standard_normal(g.mean.shape)
    noise = np.asarray(noise, dtype=g.mean.dtype)
    return g.mean + mul(exp(0.5 * g.log_var), noise)


def kl_gaussians(q: LatentGaussian, p: LatentGaussian) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the latent (one value per row)."""
    if q.mean.shape != p.mean.shape:
        raise ValueError(f"latent shapes differ: {q.mean.shape} vs {p.mean.shape}")
    diff = sub(q.mean, p.mean)
    inv_var_p = exp(-p.log_var)
    terms = exp(q.log_var - p.log_var) + diff * diff * inv_var_p - 1.0 + p.log_var - q.log_var
    return 0.5 * tsum(terms, axis=-1)
