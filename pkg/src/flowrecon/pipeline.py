"""Experiment harness: inference from a checkpoint, evaluation tables, the
Oracle baseline, inference throughput and the three ablation tables.

Only the image encoder ``psi`` and the flow ``theta`` are needed to turn an
image into a point cloud; nothing here constructs the discriminator.
"""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetSample, load_samples
from .encoders import ImageEncoder, reparam_sample
from .flow import FlowModel
from .geometry import check_image, normalize_to_box, sample_shape_surface
from .metrics import DEFAULT_TAU, MetricError, MetricReport, mean_report, pair_metrics
from .numeric import CheckpointError, ParamStore, load_checkpoint, no_grad
from .training import TrainConfig

log = logging.getLogger(__name__)

INFER_CHUNK = 16  # images per flow pass; fixed so results do not depend on batch layout


class PipelineError(RuntimeError):
    pass


@dataclass
class Generator:
    """The inference half of a trained model: ``psi`` and ``theta``."""
    config: TrainConfig
    psi: ImageEncoder
    theta: FlowModel
    step: int = 0

    @property
    def dtype(self):
        return self.theta.store.dtype


def load_generator(path) -> Generator:
    ck = load_checkpoint(path, with_adam=False)
    missing = [g for g in ("psi", "theta") if not ck.has_group(g)]
    if missing:
        raise CheckpointError(f"{path}: checkpoint lacks generator weights {missing}")
    config = TrainConfig.from_dict(ck.meta["config"])
    dt = np.dtype(config.dtype)
    psi_store, theta_store = ParamStore(dt), ParamStore(dt)
    # init values are overwritten; the rng only fixes shapes
    rng = np.random.default_rng(0)
    psi = ImageEncoder(psi_store, rng, config.latent_dim, config.image_channels)
    theta = FlowModel(theta_store, rng, config.latent_dim, config.flow_layers, config.flow_hidden, config.clamp)
    ck.load_into("psi", psi_store, with_adam=False)
    ck.load_into("theta", theta_store, with_adam=False)
    return Generator(config, psi, theta, ck.step)


def _as_generator(model) -> Generator:
    return model if isinstance(model, Generator) else load_generator(model)


def _image_batch(images, gen: Generator) -> np.ndarray:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    for im in arr:
        check_image(im)
    if arr.shape[-1] != gen.config.image_channels:
        raise PipelineError(f"model expects {gen.config.image_channels}-channel images, got {arr.shape[-1]}")
    return arr.astype(gen.dtype)


def _latents(gen: Generator, images: np.ndarray, latent_mode: str, rng) -> np.ndarray:
    p = gen.psi(images)
    if latent_mode == "mean":
        return p.mean.data
    if latent_mode == "sample":
        return reparam_sample(p, rng).data
    raise PipelineError(f"latent_mode must be 'mean' or 'sample', got {latent_mode!r}")


def infer_batch(model, images, n: int, rngs, latent_mode: str = "mean", normalize: bool = False) -> list[np.ndarray]:
    """One ``(n, 3)`` cloud per image; ``rngs`` holds one generator per image.

    Each image draws its latent noise and base points from its own stream, so
    a prediction does not depend on which other images share the batch.
    """
    gen = _as_generator(model)
    if n < 1:
        raise PipelineError("number of points must be at least 1")
    images = _image_batch(images, gen)
    if len(rngs) != len(images):
        raise PipelineError(f"{len(rngs)} rngs for {len(images)} images")
    out = []
    with no_grad():
        for lo in range(0, len(images), INFER_CHUNK):
            chunk = images[lo:lo + INFER_CHUNK]
            crngs = rngs[lo:lo + INFER_CHUNK]
            if latent_mode == "sample":
                z = np.concatenate([_latents(gen, im[None], "sample", r) for im, r in zip(chunk, crngs)])
            else:
                z = _latents(gen, chunk, latent_mode, None)
            u = np.stack([r.standard_normal((n, 3)) for r in crngs]).astype(gen.dtype)
            x = gen.theta.forward(u, z)[0].data.astype(np.float64)
            out.extend(x)
    if normalize:
        out = [normalize_to_box(c)[0] if len(c) > 1 else c for c in out]
    return out


def infer(model, image, n: int, rng: np.random.Generator, latent_mode: str = "mean",
          normalize: bool = False) -> np.ndarray:
    """Image to an ``n``-point cloud in the model's shape frame.

    Training clouds live in the ``[-1, 1]`` box frame, so the flow output is
    already in normalised coordinates; ``normalize=True`` additionally refits
    the box to this particular cloud (needs ``n >= 2``).
    """
    return infer_batch(model, image, n, [rng], latent_mode, normalize)[0]


# -- evaluation ---------------------------------------------------------------
@dataclass
class EvalRunSpec:
    checkpoint: str
    manifest: str
    n: int = 2500
    repetitions: int = 1
    tau: float = DEFAULT_TAU
    seed: int = 0
    split: str = "test"
    with_emd: bool = True
    latent_mode: str = "mean"

    def __post_init__(self):
        if self.n < 1 or self.repetitions < 1:
            raise PipelineError("n and repetitions must be at least 1")
        if not self.tau > 0:
            raise PipelineError("tau must be positive")


@dataclass
class EvalResult:
    """Per-repetition tables; each maps a category label (and ``overall``) to a report."""
    runs: list = field(default_factory=list)

    def labels(self) -> list[str]:
        return list(self.runs[0])

    def stats(self, label: str = "overall") -> dict:
        """Mean and standard deviation over repetitions of each raw metric."""
        out = {}
        for key in ("cd", "emd", "f1"):
            vals = np.array([getattr(run[label], key) for run in self.runs], dtype=np.float64)
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[key] = (float(np.mean(vals)), std)
        return out

    def mean_report(self, label: str = "overall") -> MetricReport:
        s = self.stats(label)
        return MetricReport(s["cd"][0], s["emd"][0], s["f1"][0], self.runs[0][label].count)

    def to_json(self) -> dict:
        return {
            "repetitions": len(self.runs),
            "runs": [{k: r.to_json() for k, r in run.items()} for run in self.runs],
            "summary": {lab: {k: {"mean": m, "std": s} for k, (m, s) in self.stats(lab).items()}
                        for lab in self.labels()},
        }


def _family(sample: DatasetSample) -> str:
    return sample.spec.family if sample.spec is not None else f"category{sample.category}"


def _category_tables(samples: list[DatasetSample], rows: list[tuple]) -> dict:
    table = {}
    for fam in sorted({_family(s) for s in samples}):
        table[fam] = mean_report([r for s, r in zip(samples, rows) if _family(s) == fam])
    table["overall"] = mean_report(rows)
    return table


def _sample_rngs(sub_seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence([sub_seed, 401, k])) for k in range(count)]


def predict_and_score(gen: Generator, samples: list[DatasetSample], n: int, sub_seed: int, tau: float,
                      with_emd: bool, latent_mode: str = "mean") -> list[tuple]:
    images = np.stack([s.image for s in samples])
    preds = infer_batch(gen, images, n, _sample_rngs(sub_seed, len(samples)), latent_mode)
    rows = []
    for k, (s, pred) in enumerate(zip(samples, preds)):
        try:
            rows.append(pair_metrics(pred, s.cloud, tau, with_emd, seed=sub_seed + k))
        except (MetricError, ValueError) as exc:
            raise PipelineError(f"sample {s.id}: {exc}") from exc
    return rows


def evaluate(spec: EvalRunSpec, samples: list[DatasetSample] | None = None, model=None) -> EvalResult:
    """Infer every test sample ``spec.repetitions`` times and score it against its ground truth.

    Repetition ``k`` uses sub-seed ``seed ^ k``.
    """
    gen = model if isinstance(model, Generator) else load_generator(spec.checkpoint)
    samples = samples if samples is not None else load_samples(spec.manifest, split=spec.split)
    result = EvalResult()
    for k in range(spec.repetitions):
        rows = predict_and_score(gen, samples, spec.n, spec.seed ^ k, spec.tau, spec.with_emd, spec.latent_mode)
        result.runs.append(_category_tables(samples, rows))
        log.info("repetition %d: overall CD %.3e", k, result.runs[-1]["overall"].cd)
    return result


def score_clouds(samples: list[DatasetSample], preds: list, tau: float = DEFAULT_TAU, with_emd: bool = True,
                 seed: int = 0) -> dict:
    """Score externally supplied predictions with the same per-category layout as ``evaluate``."""
    rows = [pair_metrics(p, s.cloud, tau, with_emd, seed=seed + k) for k, (s, p) in enumerate(zip(samples, preds))]
    return _category_tables(samples, rows)


def oracle_baseline(manifest, n: int = 2500, tau: float = DEFAULT_TAU, seed: int = 0, split: str = "test",
                    with_emd: bool = True, reuse_seed: bool = False) -> dict:
    """Score a fresh surface sample of each test shape against its stored cloud.

    ``reuse_seed`` redraws with the ground truth's own seed, which reproduces
    it exactly (a degenerate control that must score zero).
    """
    samples = load_samples(manifest, split=split)
    seen, kept = set(), []
    for s in samples:
        key = (_family(s), s.spec.params if s.spec is not None else s.id)
        if key not in seen:
            seen.add(key)
            kept.append(s)
    preds = []
    for k, s in enumerate(kept):
        if s.spec is None:
            raise PipelineError(f"sample {s.id}: manifest lacks the shape parameters needed for the oracle")
        draw_seed = s.cloud_seed if reuse_seed else np.random.SeedSequence([seed, 307, k])
        count = len(s.cloud) if reuse_seed else n
        # stored clouds are float32, so the redraw goes through the same rounding
        preds.append(sample_shape_surface(s.spec, count, draw_seed).astype(np.float32).astype(np.float64))
    return score_clouds(kept, preds, tau, with_emd, seed)


# -- throughput ---------------------------------------------------------------
def hardware_descriptor() -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "system": platform.system(),
    }


@dataclass
class SpeedReport:
    samples_per_second: float
    n: int
    batch: int
    batches: int
    seconds: float
    hardware: dict

    def to_json(self) -> dict:
        return dict(self.__dict__)


def bench_speed(checkpoint, manifest, n: int = 2500, batch: int = 16, duration: float = 5.0, warmup: int = 3,
                seed: int = 0, samples: list[DatasetSample] | None = None) -> SpeedReport:
    """Wall-clock throughput (images/s) of image encoding plus ``n``-point sampling.

    ``warmup`` batches run first and are not timed.  Loads only ``psi`` and ``theta``.
    """
    gen = _as_generator(checkpoint)
    samples = samples if samples is not None else load_samples(manifest, split="test")
    images = np.stack([s.image for s in samples])
    idx = np.resize(np.arange(len(images)), batch)
    rng = np.random.default_rng(seed)

    def run_once():
        infer_batch(gen, images[idx], n, [rng] * batch)

    for _ in range(warmup):
        run_once()
    count, t0 = 0, time.perf_counter()
    while True:
        run_once()
        count += 1
        elapsed = time.perf_counter() - t0
        if elapsed >= duration:
            break
    return SpeedReport(count * batch / elapsed, n, batch, count, elapsed, hardware_descriptor())


# -- ablation tables ----------------------------------------------------------
@dataclass
class AblationConfig:
    manifest: str
    variants: dict = field(default_factory=dict)  # label -> checkpoint, Table 3 rows
    checkpoint: str | None = None  # model for the resolution and stability tables
    resolution_ns: tuple = (256, 1024, 4096)
    eval_n: int = 2500
    repetitions: int = 5
    tau: float = DEFAULT_TAU
    seed: int = 0
    with_emd: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PipelineError(f"unknown ablation config keys: {sorted(unknown)}")
        return cls(**d)


def _fmt_pm(m: float, s: float, scale: float, digits: int) -> str:
    return f"{m * scale:.{digits}f} ± {s * scale:.{digits}f}"


def variant_table(cfg: AblationConfig, samples) -> tuple[str, dict]:
    rows = {}
    for label, ck in cfg.variants.items():
        spec = EvalRunSpec(ck, cfg.manifest, cfg.eval_n, 1, cfg.tau, cfg.seed, with_emd=cfg.with_emd)
        rows[label] = evaluate(spec, samples).runs[0]["overall"]
    head = f"{'Variant':<28}{'CD(x1e3)':>12}{'EMD(x1e2)':>12}{'F1(%)':>10}"
    lines = ["Architecture ablation", head, "-" * len(head)]
    lines += [f"{k:<28}{r.cd_e3:>12.3f}{r.emd_e2:>12.3f}{r.f1_pct:>10.2f}" for k, r in rows.items()]
    return "\n".join(lines), {k: r.to_json() for k, r in rows.items()}


def resolution_table(cfg: AblationConfig, samples, gen: Generator) -> tuple[str, dict]:
    cols = {}
    for n in cfg.resolution_ns:
        rows = predict_and_score(gen, samples, n, cfg.seed, cfg.tau, cfg.with_emd)
        cols[n] = mean_report(rows)
    head = f"{'Metric':<12}" + "".join(f"{'N=' + str(n):>12}" for n in cols)
    lines = ["Sampling resolution", head, "-" * len(head)]
    lines.append(f"{'CD(x1e3)':<12}" + "".join(f"{r.cd_e3:>12.3f}" for r in cols.values()))
    lines.append(f"{'EMD(x1e2)':<12}" + "".join(f"{r.emd_e2:>12.3f}" for r in cols.values()))
    lines.append(f"{'F1(%)':<12}" + "".join(f"{r.f1_pct:>12.2f}" for r in cols.values()))
    return "\n".join(lines), {str(n): r.to_json() for n, r in cols.items()}


def stability_table(cfg: AblationConfig, samples, gen: Generator) -> tuple[str, dict]:
    spec = EvalRunSpec(cfg.checkpoint, cfg.manifest, cfg.eval_n, cfg.repetitions, cfg.tau, cfg.seed,
                       with_emd=cfg.with_emd)
    res = evaluate(spec, samples, model=gen)
    head = f"{'Category':<20}{'CD(x1e3)':>20}{'EMD(x1e2)':>20}{'F1(%)':>20}"
    lines = [f"Repeated sampling ({cfg.repetitions} runs, N={cfg.eval_n})", head, "-" * len(head)]
    for lab in res.labels():
        st = res.stats(lab)
        lines.append(f"{lab:<20}{_fmt_pm(*st['cd'], 1e3, 3):>20}{_fmt_pm(*st['emd'], 1e2, 3):>20}"
                     f"{_fmt_pm(*st['f1'], 1e2, 2):>20}")
    return "\n".join(lines), res.to_json()


def ablation_tables(cfg: AblationConfig) -> tuple[str, dict]:
    """Text (paper layout) and JSON for whichever tables the config asks for."""
    wanted = list(cfg.variants.values()) + ([cfg.checkpoint] if cfg.checkpoint else [])
    missing = [str(p) for p in wanted if not Path(p).is_file()]
    if missing:
        raise PipelineError(f"missing checkpoints: {missing}")
    samples = load_samples(cfg.manifest, split="test")
    texts, data = [], {}
    if cfg.variants:
        t, j = variant_table(cfg, samples)
        texts.append(t)
        data["variants"] = j
    if cfg.checkpoint:
        gen = load_generator(cfg.checkpoint)
        t, j = resolution_table(cfg, samples, gen)
        texts.append(t)
        data["resolution"] = j
        t, j = stability_table(cfg, samples, gen)
        texts.append(t)
        data["stability"] = j
    return "\n\n".join(texts), data


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))
