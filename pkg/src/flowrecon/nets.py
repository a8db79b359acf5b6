"""Reusable network blocks: shared-MLP set encoder and strided CNN encoder.

Blocks register their parameters in a :class:`ParamStore` under a prefix and
read them back at call time from a mapping ``P``.  Passing a frozen mapping
(constant copies) evaluates the block without recording gradients to its
parameters.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .numeric import ParamStore, Tensor, add_conv, add_linear, conv2d, linear, mean, relu, set_max


def frozen(store: ParamStore) -> dict:
    """Constant copies of every parameter; gradients stop here."""
    return {n: Tensor(t.data) for n, t in store.items()}


class MLP:
    def __init__(self, store: ParamStore, rng: np.random.Generator, prefix: str, widths: Sequence[int],
                 zero_last: bool = False):
        self.store = store
        self.names = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = k == len(widths) - 2
            add_linear(store, rng, f"{prefix}.{k}", a, b, zero=zero_last and last)
            self.names.append(f"{prefix}.{k}")

    def __call__(self, x, P: Mapping | None = None, final_relu: bool = False) -> Tensor:
        P = self.store if P is None else P
        for k, name in enumerate(self.names):
            x = linear(x, P[name + ".w"], P[name + ".b"])
            if k < len(self.names) - 1 or final_relu:
                x = relu(x)
        return x


class SetEncoder:
    """Per-point shared MLP, max-pool over points, then a linear head.

    Input ``(B, N, 3)``; output ``(B, out_dim)``.  Max-pooling makes the
    output exactly invariant to the order of points.
    """

    def __init__(self, store: ParamStore, rng: np.random.Generator, prefix: str, out_dim: int,
                 widths: Sequence[int] = (64, 128, 256), zero_head: bool = False):
        self.store = store
        self.point_mlp = MLP(store, rng, f"{prefix}.pt", (3, *widths))
        self.head = MLP(store, rng, f"{prefix}.head", (widths[-1], out_dim), zero_last=zero_head)

    def __call__(self, clouds, P: Mapping | None = None) -> Tensor:
        h = self.point_mlp(clouds, P, final_relu=True)
        return self.head(set_max(h, axis=-2), P)


class ConvEncoder:
    """Stride-2 3x3 conv blocks, global average pool, MLP head.

    Input ``(B, H, W, C)`` with ``H, W >= 8``; output ``(B, out_dim)``.
    """

    def __init__(self, store: ParamStore, rng: np.random.Generator, prefix: str, in_channels: int,
                 out_dim: int, channels: Sequence[int] = (16, 32, 64, 128), head_hidden: int = 128,
                 zero_head: bool = False):
        self.store = store
        self.convs = []
        c_in = in_channels
        for k, c_out in enumerate(channels):
            add_conv(store, rng, f"{prefix}.conv{k}", 3, c_in, c_out)
            self.convs.append(f"{prefix}.conv{k}")
            c_in = c_out
        self.head = MLP(store, rng, f"{prefix}.head", (c_in, head_hidden, out_dim), zero_last=zero_head)

    def __call__(self, images, P: Mapping | None = None) -> Tensor:
        P = self.store if P is None else P
        h = images
        for name in self.convs:
            h = relu(conv2d(h, P[name + ".w"], P[name + ".b"], stride=2, pad=1))
        return self.head(mean(h, axis=(1, 2)), P)
