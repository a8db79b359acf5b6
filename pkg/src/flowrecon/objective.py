"""Generator objectives: reconstruction likelihood, negative ELBO and the adversarial term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminator import Discriminator
from .encoders import ImageEncoder, LatentGaussian, PointEncoder, kl_gaussians, reparam_sample
from .flow import FlowModel
from .numeric import Tensor, mean, square


@dataclass
class GeneratorLossBreakdown:
    recon_nll: float
    kl: float
    adv: float
    total: float
    kl_weight: float
    adv_weight: float
    loss: Tensor | None = None  # differentiable total

    def record(self) -> dict:
        return {"recon_nll": self.recon_nll, "kl": self.kl, "adv": self.adv, "total": self.total}


def recon_loglik(flow: FlowModel, clouds, z) -> Tensor:
    """Mean per-point ``log p(x | z)`` for each cloud, shape ``(B,)``."""
    return mean(flow.log_prob(clouds, z), axis=-1)


def negative_elbo(phi: PointEncoder, psi: ImageEncoder, flow: FlowModel, clouds, images,
                  rng: np.random.Generator, kl_weight: float, q: LatentGaussian | None = None,
                  p: LatentGaussian | None = None, noise=None) -> GeneratorLossBreakdown:
    """Batch mean of ``-recon + kl_weight * KL(q(z|X) || p(z|I))`` with ``z ~ q`` reparameterised."""
    q = phi(clouds) if q is None else q
    p = psi(images) if p is None else p
    z = reparam_sample(q, rng, noise)
    nll = -mean(recon_loglik(flow, clouds, z))
    kl = mean(kl_gaussians(q, p))
    loss = nll + kl_weight * kl
    nll_v, kl_v = float(nll.data), float(kl.data)
    return GeneratorLossBreakdown(nll_v, kl_v, 0.0, nll_v + kl_weight * kl_v, kl_weight, 0.0, loss)


def generator_adv_loss(disc: Discriminator, images, predicted) -> Tensor:
    """``1/2 (D(I, X_hat) - 1)^2`` averaged over the batch; D's parameters stay frozen."""
    return 0.5 * mean(square(disc(images, predicted, frozen_params=True) - 1.0))


def total_generator_loss(elbo: GeneratorLossBreakdown, adv: Tensor | None, adv_weight: float) -> GeneratorLossBreakdown:
    if adv is None or adv_weight == 0.0:
        adv_value = 0.0 if adv is None else float(adv.data)
        total = elbo.loss
    else:
        adv_value = float(adv.data)
        total = elbo.loss + adv_weight * adv
    value = elbo.recon_nll + elbo.kl_weight * elbo.kl + adv_weight * adv_value
    return GeneratorLossBreakdown(elbo.recon_nll, elbo.kl, adv_value, value, elbo.kl_weight, adv_weight, total)
