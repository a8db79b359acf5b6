"""Synthetic image/point-cloud dataset: generation, manifest and loading."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cloudio
from .geometry import FAMILIES, ShapeSpec, random_spec, render_silhouette, sample_shape_surface


class DataError(RuntimeError):
    pass


@dataclass
class DatasetConfig:
    categories: list = field(default_factory=lambda: ["ellipsoid", "box", "cross"])
    shapes_per_category: int = 200
    views_per_shape: int = 1
    train_fraction: float = 0.8
    points_per_cloud: int = 2500
    resolution: int = 32
    elevation_range: tuple = (0.2, 0.8)
    seed: int = 0

    def __post_init__(self):
        for fam in self.categories:
            if fam not in FAMILIES:
                raise ValueError(f"unknown category {fam!r}; choose from {FAMILIES}")
        if self.shapes_per_category < 1 or self.views_per_shape < 1:
            raise ValueError("shapes_per_category and views_per_shape must be positive")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in [0, 1]")
        if self.resolution < 8:
            raise ValueError("resolution must be at least 8")
        self.elevation_range = tuple(self.elevation_range)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DatasetSample:
    id: str
    image: np.ndarray
    cloud: np.ndarray
    category: int
    azimuth: float
    elevation: float
    spec: ShapeSpec | None = None
    cloud_seed: int | None = None


def _shape_seed(seed: int, cat: int, idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 101, cat, idx])


def build_dataset(config: DatasetConfig, out_dir) -> list[dict]:
    """Render every sample, write clouds/images and ``manifest.json``; return the records."""
    out = Path(out_dir)
    try:
        (out / "clouds").mkdir(parents=True, exist_ok=True)
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from exc

    records = []
    n_train = int(round(config.train_fraction * config.shapes_per_category))
    for cat, family in enumerate(config.categories):
        order = np.random.default_rng([config.seed, 202, cat]).permutation(config.shapes_per_category)
        train_ids = set(order[:n_train].tolist())
        for idx in range(config.shapes_per_category):
            ss = _shape_seed(config.seed, cat, idx)
            spec_rng, cloud_rng, view_rng = (np.random.default_rng(s) for s in ss.spawn(3))
            spec = random_spec(family, spec_rng, category=cat)
            cloud_seed = int(cloud_rng.integers(2 ** 63))
            cloud = sample_shape_surface(spec, config.points_per_cloud, cloud_seed)
            split = "train" if idx in train_ids else "test"
            for v in range(config.views_per_shape):
                az = float(view_rng.uniform(0.0, 2.0 * np.pi))
                el = float(view_rng.uniform(*config.elevation_range))
                sid = f"{family}_{idx:04d}_v{v:02d}"
                cloud_rel = f"clouds/{family}_{idx:04d}.bin"
                image_rel = f"images/{sid}.pgm"
                image = render_silhouette(spec, az, el, config.resolution)
                try:
                    if v == 0:
                        cloudio.write_pcf(out / cloud_rel, cloud)
                    cloudio.write_pnm(out / image_rel, image)
                except OSError as exc:
                    raise DataError(f"failed writing sample {sid} under {out}: {exc}") from exc
                records.append({
                    "id": sid, "category": cat, "family": family, "params": list(spec.params),
                    "split": split, "cloud_path": cloud_rel, "image_path": image_rel,
                    "azimuth": az, "elevation": el, "cloud_seed": cloud_seed,
                    "n_points": config.points_per_cloud,
                })
    records.sort(key=lambda r: r["id"])
    manifest = out / "manifest.json"
    try:
        manifest.write_text(json.dumps(records, indent=1, sort_keys=True))
        (out / "dataset_config.json").write_text(json.dumps(asdict(config), indent=1, sort_keys=True))
    except OSError as exc:
        raise DataError(f"failed writing manifest {manifest}: {exc}") from exc
    return records


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc


def spec_of(record: dict) -> ShapeSpec:
    return ShapeSpec(record["family"], tuple(record["params"]), int(record["category"]))


def load_samples(manifest_path, split: str | None = None) -> list[DatasetSample]:
    """Load every record (optionally one split) with its image and cloud in memory."""
    manifest_path = Path(manifest_path)
    root = manifest_path if manifest_path.is_dir() else manifest_path.parent
    samples = []
    for rec in read_manifest(manifest_path):
        if split is not None and rec["split"] != split:
            continue
        try:
            cloud = cloudio.read_cloud(root / rec["cloud_path"])
            image = cloudio.read_pnm(root / rec["image_path"])
        except (OSError, cloudio.FormatError) as exc:
            raise DataError(f"sample {rec['id']}: {exc}") from exc
        spec = spec_of(rec) if "family" in rec else None
        samples.append(DatasetSample(rec["id"], image, cloud, int(rec["category"]), rec["azimuth"],
                                     rec["elevation"], spec, rec.get("cloud_seed")))
    if not samples:
        raise DataError(f"no samples found in {manifest_path} (split={split})")
    return samples
