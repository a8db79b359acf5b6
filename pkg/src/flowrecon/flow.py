"""Conditional affine-coupling flow over 3-d points.

``forward`` maps base samples ``u ~ N(0, I_3)`` to points ``x`` given a shape
latent ``z``; ``inverse`` maps points back to the base space.  Each coupling
layer keeps its passive coordinates and applies ``y_a * exp(s) + t`` to the
active ones, where ``(s, t)`` come from an MLP on ``passive ++ z`` and ``s`` is
soft-clamped to ``clamp * tanh(s / clamp)``.
"""
from __future__ import annotations

import numpy as np

from .numeric import (ParamStore, Tensor, add_linear, as_tensor_like, concat, exp, glorot_uniform,
                      linear, relu, reshape, std_normal_logpdf, take, tanh, tsum)

# passive-coordinate masks, cycled; every coordinate is active within 6 layers
MASK_PATTERNS = ((1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 0))


class CouplingLayer:
    def __init__(self, store: ParamStore, rng: np.random.Generator, prefix: str, mask, latent_dim: int,
                 hidden: int = 128, clamp: float = 2.0):
        mask = tuple(int(m) for m in mask)
        if len(mask) != 3 or not 0 < sum(mask) < 3:
            raise ValueError(f"mask needs 1 or 2 passive coordinates, got {mask}")
        self.mask = mask
        self.passive = np.array([i for i in range(3) if mask[i]], dtype=np.intp)
        self.active = np.array([i for i in range(3) if not mask[i]], dtype=np.intp)
        self.unorder = np.argsort(np.concatenate([self.passive, self.active]))
        self.clamp = float(clamp)
        self.store = store
        self.prefix = prefix
        n_p, n_a = len(self.passive), len(self.active)
        # first layer acts on passive ++ z; stored as two row blocks of one matrix
        w_in = glorot_uniform(rng, n_p + latent_dim, hidden)
        store.add(f"{prefix}.in_p.w", w_in[:n_p])
        store.add(f"{prefix}.in_z.w", w_in[n_p:])
        store.add(f"{prefix}.in.b", np.zeros(hidden))
        add_linear(store, rng, f"{prefix}.hid", hidden, hidden)
        add_linear(store, rng, f"{prefix}.out", hidden, 2 * n_a, zero=True)

    def scale_shift(self, y_passive: Tensor, z: Tensor, P=None) -> tuple[Tensor, Tensor]:
        P = self.store if P is None else P
        pre = self.prefix
        zt = linear(z, P[f"{pre}.in_z.w"])
        zt = reshape(zt, (zt.shape[0], 1, zt.shape[1]))
        h = relu(linear(y_passive, P[f"{pre}.in_p.w"], P[f"{pre}.in.b"]) + zt)
        h = relu(linear(h, P[f"{pre}.hid.w"], P[f"{pre}.hid.b"]))
        out = linear(h, P[f"{pre}.out.w"], P[f"{pre}.out.b"])
        n_a = len(self.active)
        s = take(out, np.arange(n_a))
        t = take(out, np.arange(n_a, 2 * n_a))
        s = self.clamp * tanh(s * (1.0 / self.clamp))
        return s, t

    def forward(self, y: Tensor, z: Tensor, P=None) -> tuple[Tensor, Tensor]:
        yp, ya = take(y, self.passive), take(y, self.active)
        s, t = self.scale_shift(yp, z, P)
        ya = ya * exp(s) + t
        return take(concat([yp, ya]), self.unorder), tsum(s, axis=-1)

    def inverse(self, y: Tensor, z: Tensor, P=None) -> tuple[Tensor, Tensor]:
        yp, ya = take(y, self.passive), take(y, self.active)
        s, t = self.scale_shift(yp, z, P)
        ya = (ya - t) * exp(-s)
        return take(concat([yp, ya]), self.unorder), -tsum(s, axis=-1)


class FlowModel:
    """Stack of ``n_layers`` coupling layers with a standard-normal base."""

    def __init__(self, store: ParamStore, rng: np.random.Generator, latent_dim: int, n_layers: int = 16,
                 hidden: int = 128, clamp: float = 2.0, prefix: str = "flow"):
        if n_layers < 1:
            raise ValueError("need at least one coupling layer")
        self.store = store
        self.latent_dim = latent_dim
        self.layers = [CouplingLayer(store, rng, f"{prefix}.l{k}", MASK_PATTERNS[k % 6], latent_dim,
                                     hidden, clamp) for k in range(n_layers)]

    def _prep(self, y, z):
        y = as_tensor_like(y, self.store.dtype)
        z = as_tensor_like(z, self.store.dtype)
        if y.ndim != 3 or y.shape[-1] != 3:
            raise ValueError(f"points must be (B, N, 3), got {y.shape}")
        if z.shape != (y.shape[0], self.latent_dim):
            raise ValueError(f"latent must be ({y.shape[0]}, {self.latent_dim}), got {z.shape}")
        return y, z

    def forward(self, u, z, P=None) -> tuple[Tensor, Tensor]:
        """Base -> data.  Returns points and per-point ``log|det dx/du|``."""
        x, z = self._prep(u, z)
        logdet = None
        for layer in self.layers:
            x, ld = layer.forward(x, z, P)
            logdet = ld if logdet is None else logdet + ld
        return x, logdet

    def inverse(self, x, z, P=None) -> tuple[Tensor, Tensor]:
        """Data -> base.  Returns base points and per-point ``log|det du/dx|``."""
        u, z = self._prep(x, z)
        logdet = None
        for layer in reversed(self.layers):
            u, ld = layer.inverse(u, z, P)
            logdet = ld if logdet is None else logdet + ld
        return u, logdet

    def log_prob(self, x, z, P=None) -> Tensor:
        """Per-point ``log p(x | z)`` by change of variables, shape ``(B, N)``."""
        u, logdet = self.inverse(x, z, P)
        return std_normal_logpdf(u) + logdet

    def sample(self, z, n: int, rng: np.random.Generator, P=None) -> Tensor:
        """``n`` points per latent row: i.i.d. base draws pushed through ``forward``."""
        if n < 1:
            raise ValueError("number of points must be at least 1")
        z = as_tensor_like(z, self.store.dtype)
        u = rng.standard_normal((z.shape[0], n, 3)).astype(self.store.dtype)
        return self.forward(u, z, P)[0]
