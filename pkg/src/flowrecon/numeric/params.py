"""Named parameter storage, initialisation, Adam and the learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered collection of trainable tensors plus their Adam moments.

    Iteration order is insertion order, which is also the checkpoint order.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (np.zeros_like(t.data) if t.grad is None else t.grad)
                for n, t in self._params.items()}

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def astype(self, dtype) -> None:
        self.dtype = np.dtype(dtype)
        for n, t in self._params.items():
            t.data = t.data.astype(self.dtype)
            self.m[n] = self.m[n].astype(self.dtype)
            self.v[n] = self.v[n].astype(self.dtype)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_linear(store: ParamStore, rng: np.random.Generator, name: str, n_in: int, n_out: int,
               zero: bool = False) -> tuple[Tensor, Tensor]:
    w = np.zeros((n_in, n_out)) if zero else glorot_uniform(rng, n_in, n_out)
    return store.add(f"{name}.w", w), store.add(f"{name}.b", np.zeros(n_out))


def add_conv(store: ParamStore, rng: np.random.Generator, name: str, k: int, c_in: int,
             c_out: int) -> tuple[Tensor, Tensor]:
    w = glorot_uniform(rng, k * k * c_in, k * k * c_out, shape=(k, k, c_in, c_out))
    return store.add(f"{name}.w", w), store.add(f"{name}.b", np.zeros(c_out))


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 2.56e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], hyper: AdamHyper) -> None:
    """Bias-corrected Adam update, applied in place."""
    if set(grads) != set(store):
        missing = set(store) ^ set(grads)
        raise KeyError(f"gradients misaligned with parameter store: {sorted(missing)}")
    store.step += 1
    t = store.step
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        g = np.asarray(grads[name], dtype=store.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)).astype(store.dtype, copy=False)


def lr_at(epoch: int, base_lr: float, drop_epoch: int = 20, divisor: float = 4.0) -> float:
    """Step schedule: ``base_lr`` until ``drop_epoch``, then ``base_lr / divisor``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr if epoch < drop_epoch else base_lr / divisor
