"""Cross-modal discriminator scoring (image, point cloud) pairs, and its LSGAN loss."""
from __future__ import annotations

import numpy as np

from .nets import MLP, ConvEncoder, SetEncoder, frozen
from .numeric import ParamStore, Tensor, as_tensor_like, concat, mean, reshape, square

FEATURE_DIM = 128
HEAD_WIDTHS = (256, 256, 128, 64, 32, 1)


class Discriminator:
    """Point features (128) ++ image features (128) -> 5 affine layers -> scalar.

    The output is unsquashed; the least-squares loss regresses it to 1 for
    real pairs and 0 for generated ones.
    """

    def __init__(self, store: ParamStore, rng: np.random.Generator, in_channels: int = 1,
                 point_widths=(64, 128, 256), image_channels=(16, 32, 64, 128), zero_output: bool = False):
        self.store = store
        self.e_x = SetEncoder(store, rng, "ex", FEATURE_DIM, point_widths)
        self.e_i = ConvEncoder(store, rng, "ei", in_channels, FEATURE_DIM, image_channels, FEATURE_DIM)
        self.head = MLP(store, rng, "head", HEAD_WIDTHS, zero_last=zero_output)

    def __call__(self, images, clouds, frozen_params: bool = False) -> Tensor:
        """Scores of shape ``(B,)``.  ``frozen_params`` blocks gradients into D's parameters."""
        P = frozen(self.store) if frozen_params else self.store
        images = as_tensor_like(images, self.store.dtype)
        clouds = as_tensor_like(clouds, self.store.dtype)
        if clouds.ndim != 3 or clouds.shape[1] == 0:
            raise ValueError(f"expected a batch of non-empty clouds (B, N, 3), got {clouds.shape}")
        feats = concat([self.e_x(clouds, P), self.e_i(images, P)], axis=-1)
        out = self.head(feats, P)
        return reshape(out, (out.shape[0],))


def discriminator_loss(disc: Discriminator, images, real, fake) -> Tensor:
    """``1/2 [(D(I, X) - 1)^2 + D(I, X_hat)^2]``, averaged over the batch.

    ``fake`` is taken as raw data, so no gradient can reach the generator.
    """
    fake = fake.data if isinstance(fake, Tensor) else fake
    real = real.data if isinstance(real, Tensor) else real
    d_real = disc(images, real)
    d_fake = disc(images, fake)
    return 0.5 * mean(square(d_real - 1.0) + square(d_fake))
