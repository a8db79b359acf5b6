"""Alternating least-squares adversarial training of the flow generator.

Each step first updates the discriminator on (image, real cloud) versus
(image, detached generated cloud), then updates the generator (both encoders
and the flow) on the negative ELBO plus the weighted adversarial term.  All
randomness is derived from ``(seed, epoch)`` or ``(seed, step)``, so a run
resumed from any epoch checkpoint follows the uninterrupted trajectory.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import DatasetSample, load_samples
from .discriminator import Discriminator, discriminator_loss
from .encoders import ImageEncoder, LatentGaussian, PointEncoder, reparam_sample
from .flow import FlowModel
from .numeric import (AdamHyper, ParamStore, Tensor, adam_step, load_checkpoint, lr_at, no_grad,
                      save_checkpoint)
from .objective import generator_adv_loss, negative_elbo, total_generator_loss

log = logging.getLogger(__name__)

GENERATOR_GROUPS = ("phi", "psi", "theta")


class ConfigError(ValueError):
    pass


class NumericalFailure(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 2.56e-4
    lr_drop_epoch: int = 20
    lr_divisor: float = 4.0
    points_per_cloud: int = 256
    latent_dim: int = 64
    flow_layers: int = 16
    flow_hidden: int = 128
    clamp: float = 2.0
    kl_weight: float | None = None  # None -> 1 / latent_dim
    adv_weight: float = 0.05
    d_steps_per_g_step: int = 1
    seed: int = 0
    dtype: str = "float32"
    image_channels: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.kl_weight is None:
            self.kl_weight = 1.0 / self.latent_dim
        positive = ("epochs", "batch_size", "base_lr", "lr_divisor", "points_per_cloud", "latent_dim",
                    "flow_layers", "flow_hidden", "clamp", "d_steps_per_g_step")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kl_weight < 0 or self.adv_weight < 0 or self.lr_drop_epoch < 0:
            raise ConfigError("kl_weight, adv_weight and lr_drop_epoch must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.image_channels not in (1, 3):
            raise ConfigError("image_channels must be 1 or 3")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


class Model:
    """The four networks and their parameter stores.

    ``phi`` point encoder, ``psi`` image encoder, ``theta`` flow decoder and
    ``disc`` discriminator (optional: inference never needs it).
    """

    def __init__(self, config: TrainConfig, with_disc: bool = True):
        self.config = config
        dt = np.dtype(config.dtype)
        self.stores = {g: ParamStore(dt) for g in ("phi", "psi", "theta")}
        seeds = np.random.SeedSequence([config.seed, 11]).spawn(4)
        rngs = [np.random.default_rng(s) for s in seeds]
        d = config.latent_dim
        self.phi = PointEncoder(self.stores["phi"], rngs[0], d)
        self.psi = ImageEncoder(self.stores["psi"], rngs[1], d, config.image_channels)
        self.theta = FlowModel(self.stores["theta"], rngs[2], d, config.flow_layers, config.flow_hidden,
                               config.clamp)
        self.disc = None
        if with_disc:
            self.stores["disc"] = ParamStore(dt)
            self.disc = Discriminator(self.stores["disc"], rngs[3], config.image_channels)

    def generator_stores(self) -> dict:
        return {g: self.stores[g] for g in GENERATOR_GROUPS}


def make_fake_cloud(psi: ImageEncoder, theta: FlowModel, images, n: int, rng: np.random.Generator,
                    p: LatentGaussian | None = None) -> Tensor:
    """Image path: ``z ~ p(z|I)`` reparameterised, then ``n`` flow samples per image."""
    p = psi(images) if p is None else p
    z = reparam_sample(p, rng)
    return theta.sample(z, n, rng)


@dataclass
class TrainState:
    model: Model
    epoch: int = 0  # completed epochs
    step: int = 0   # completed steps
    history: list = field(default_factory=list)


def _step_rngs(seed: int, step: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 23, step]).spawn(3)]


def _batch_arrays(batch: list[DatasetSample], n: int, rng: np.random.Generator, dtype):
    images = np.stack([s.image for s in batch]).astype(dtype)
    clouds = np.stack([s.cloud[rng.choice(len(s.cloud), n, replace=n > len(s.cloud))] for s in batch])
    return images, clouds.astype(dtype)


def _snapshot(stores: dict) -> dict:
    return {g: [t.data.copy() for t in s.tensors()] for g, s in stores.items()}


def _changed(before: dict, stores: dict) -> set:
    return {g for g, s in stores.items() if any(not np.array_equal(a, t.data) for a, t in zip(before[g], s.tensors()))}


def train_step(state: TrainState, batch: list[DatasetSample], config: TrainConfig) -> dict:
    """One discriminator update followed by one generator update."""
    if not batch:
        raise ValueError("empty batch")
    model = state.model
    lr = lr_at(state.epoch, config.base_lr, config.lr_drop_epoch, config.lr_divisor)
    hyper = AdamHyper(lr=lr)
    data_rng, d_rng, g_rng = _step_rngs(config.seed, state.step)
    images, clouds = _batch_arrays(batch, config.points_per_cloud, data_rng, np.dtype(config.dtype))
    ids = [s.id for s in batch]
    use_disc = config.adv_weight > 0 and model.disc is not None
    before = _snapshot(model.stores) if config.debug else None

    d_loss = math.nan
    if use_disc:
        dstore = model.stores["disc"]
        for _ in range(config.d_steps_per_g_step):
            with no_grad():
                fake = make_fake_cloud(model.psi, model.theta, images, clouds.shape[1], d_rng).data
            dstore.zero_grad()
            loss = discriminator_loss(model.disc, images, clouds, fake)
            d_loss = float(loss.data)
            if not math.isfinite(d_loss):
                raise NumericalFailure(f"non-finite discriminator loss at step {state.step}, batch {ids}")
            loss.backward()
            adam_step(dstore, dstore.grads(), hyper)
        if config.debug:
            changed = _changed(before, model.stores)
            assert changed <= {"disc"}, f"discriminator step touched {changed}"
            before = _snapshot(model.stores)

    gstores = model.generator_stores()
    for s in gstores.values():
        s.zero_grad()
    p = model.psi(images)
    elbo = negative_elbo(model.phi, model.psi, model.theta, clouds, images, g_rng, config.kl_weight, p=p)
    adv = None
    if use_disc:
        fake = make_fake_cloud(model.psi, model.theta, images, clouds.shape[1], g_rng, p=p)
        adv = generator_adv_loss(model.disc, images, fake)
    out = total_generator_loss(elbo, adv, config.adv_weight)
    if not math.isfinite(out.total):
        raise NumericalFailure(f"non-finite generator loss at step {state.step}, batch {ids}: {out.record()}")
    out.loss.backward()
    for s in gstores.values():
        adam_step(s, s.grads(), hyper)
    if config.debug:
        changed = _changed(before, model.stores)
        assert changed <= set(GENERATOR_GROUPS), f"generator step touched {changed}"

    state.step += 1
    rec = {"step": state.step, "epoch": state.epoch, **out.record(), "d_loss": d_loss, "lr": lr}
    state.history.append(rec)
    return rec


def epoch_batches(n_samples: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng(np.random.SeedSequence([seed, 31, epoch])).permutation(n_samples)
    return [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]


def checkpoint_meta(state: TrainState) -> dict:
    return {"config": state.model.config.to_dict(), "epoch": state.epoch, "step": state.step}


def save_state(path, state: TrainState) -> None:
    save_checkpoint(path, state.model.stores, step=state.step, meta=checkpoint_meta(state))


def load_state(path, config: TrainConfig | None = None) -> TrainState:
    ck = load_checkpoint(path)
    saved = TrainConfig.from_dict(ck.meta["config"])
    if config is not None and config.to_dict() != saved.to_dict():
        diff = {k for k, v in config.to_dict().items() if saved.to_dict().get(k) != v}
        raise ConfigError(f"resume config mismatch in {sorted(diff)}")
    model = Model(saved, with_disc=ck.has_group("disc"))
    for g, store in model.stores.items():
        ck.load_into(g, store)
    return TrainState(model, epoch=int(ck.meta["epoch"]), step=int(ck.meta["step"]))


def train(config: TrainConfig, manifest, out_dir, resume=None, stop_after_epoch: int | None = None,
          samples: list[DatasetSample] | None = None) -> TrainState:
    """Full training run; writes ``train_log.jsonl``, per-epoch checkpoints and ``final.fgck``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set = samples if samples is not None else load_samples(manifest, split="train")
    state = load_state(resume, config) if resume else TrainState(Model(config))
    log_path = out / "train_log.jsonl"
    mode = "a" if resume else "w"
    last = stop_after_epoch if stop_after_epoch is not None else config.epochs
    with open(log_path, mode) as fh:
        if not resume:
            fh.write(json.dumps({"header": config.to_dict()}, sort_keys=True) + "\n")
        while state.epoch < min(last, config.epochs):
            for idx in epoch_batches(len(train_set), config.batch_size, config.seed, state.epoch):
                rec = train_step(state, [train_set[i] for i in idx], config)
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            state.epoch += 1
            save_state(out / f"ckpt_epoch{state.epoch:03d}.fgck", state)
            log.info("epoch %d done: step %d total %.4f", state.epoch, state.step, state.history[-1]["total"])
    save_state(out / "final.fgck", state)
    return state


def read_log(path) -> tuple[dict, list[dict]]:
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "header" in rec:
                header = rec["header"]
            else:
                rows.append(rec)
    return header, rows
