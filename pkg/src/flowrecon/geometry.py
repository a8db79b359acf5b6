"""Point clouds, box normalisation and the synthetic parametric shape families.

Clouds are plain ``(N, 3)`` float arrays and images ``(H, W, C)`` float arrays
in ``[0, 1]``.  Each :class:`ShapeSpec` is a union of simple solids (boxes,
ellipsoids, z-aligned cylinders) whose boundary is sampled uniformly by area.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import elliprg


class GeometryError(ValueError):
    pass


# -- normalisation -------------------------------------------------------------
@dataclass(frozen=True)
class BoxTransform:
    center: tuple
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.center)


def check_cloud(points, name: str = "cloud") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (N, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise GeometryError(f"{name} is empty")
    if not np.all(np.isfinite(pts)):
        raise GeometryError(f"{name} has non-finite coordinates")
    return pts


def box_transform(lo, hi) -> BoxTransform:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    scale = 0.5 * float(np.max(hi - lo))
    if not scale > 0:
        raise GeometryError("zero extent: cloud bounding box is degenerate")
    return BoxTransform(tuple(float(c) for c in 0.5 * (lo + hi)), scale)


def normalize_to_box(points) -> tuple[np.ndarray, BoxTransform]:
    """Center the bounding box at the origin and scale its largest side to 2.

    Scaling is uniform, so the aspect ratio of the cloud is preserved.
    """
    pts = check_cloud(points)
    tf = box_transform(pts.min(axis=0), pts.max(axis=0))
    out = tf.apply(pts)
    np.clip(out, -1.0, 1.0, out=out)  # absorbs last-ulp overshoot only
    return out, tf


# -- solids -----------------------------------------------------------------

class Box:
    def __init__(self, center, half):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half, dtype=np.float64)

    def area(self) -> float:
        a, b, c = self.half
        return 8.0 * (a * b + b * c + a * c)

    def bounds(self):
        return self.center - self.half, self.center + self.half

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a, b, c = self.half
        face_area = np.array([b * c, a * c, a * b])  # faces normal to x, y, z
        axis = rng.choice(3, size=n, p=face_area / face_area.sum())
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * self.half
        pts[np.arange(n), axis] = sign * self.half[axis]
        return pts + self.center

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.all(np.abs(pts - self.center) < self.half, axis=1)


class Ellipsoid:
    def __init__(self, center, axes):
        self.center = np.asarray(center, dtype=np.float64)
        self.axes = np.asarray(axes, dtype=np.float64)

    def area(self) -> float:
        a, b, c = self.axes
        return float(4.0 * np.pi * a * b * c * elliprg(a ** -2, b ** -2, c ** -2))

    def bounds(self):
        return self.center - self.axes, self.center + self.axes

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a, b, c = self.axes
        # area element of the sphere->ellipsoid map, for rejection
        w = np.array([b * c, a * c, a * b])
        wmax = w.max()
        out = []
        have = 0
        while have < n:
            m = max(16, 2 * (n - have))
            u = rng.standard_normal((m, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            g = np.sqrt(((u * w) ** 2).sum(axis=1))
            keep = rng.random(m) * wmax < g
            out.append(u[keep])
            have += int(keep.sum())
        u = np.concatenate(out)[:n]
        return u * self.axes + self.center

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return (((pts - self.center) / self.axes) ** 2).sum(axis=1) < 1.0


class Cylinder:
    """Closed cylinder aligned with z."""

    def __init__(self, center, radius: float, half_height: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.half_height = float(half_height)

    def area(self) -> float:
        r, h = self.radius, self.half_height
        return 2.0 * np.pi * r * r + 4.0 * np.pi * r * h

    def bounds(self):
        ext = np.array([self.radius, self.radius, self.half_height])
        return self.center - ext, self.center + ext

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        r, h = self.radius, self.half_height
        side = 4.0 * np.pi * r * h
        on_side = rng.random(n) < side / self.area()
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        rho = np.where(on_side, r, r * np.sqrt(rng.random(n)))
        z = np.where(on_side, rng.uniform(-h, h, n), np.where(rng.random(n) < 0.5, -h, h))
        pts = np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)
        return pts + self.center

    def inside(self, pts: np.ndarray) -> np.ndarray:
        d = pts - self.center
        return (d[:, 0] ** 2 + d[:, 1] ** 2 < self.radius ** 2) & (np.abs(d[:, 2]) < self.half_height)


# -- shape families -------------------------------------------------------------
FAMILIES = ("ellipsoid", "box", "cross", "cylinder-composite")

# per-family parameter ranges (low, high), drawn uniformly
PARAM_RANGES = {
    "ellipsoid": [(0.35, 1.0), (0.35, 1.0), (0.35, 1.0)],            # semi-axes a, b, c
    "box": [(0.2, 1.0), (0.2, 1.0), (0.2, 1.0)],                      # half-extents
    "cross": [(0.6, 1.0), (0.15, 0.3), (0.6, 1.0), (0.3, 0.8)],       # L1, t1, L2, t2/t1
    "cylinder-composite": [(0.1, 0.3), (0.5, 1.0), (0.5, 1.0), (0.05, 0.2)],  # r1, h1, r2, h2
}


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple
    category: int = 0

    def __post_init__(self):
        if self.family not in PARAM_RANGES:
            raise GeometryError(f"unknown shape family {self.family!r}")
        ranges = PARAM_RANGES[self.family]
        if len(self.params) != len(ranges):
            raise GeometryError(f"{self.family} takes {len(ranges)} parameters, got {len(self.params)}")
        for value, (lo, hi) in zip(self.params, ranges):
            if not (lo <= value <= hi):
                raise GeometryError(f"{self.family} parameter {value} outside [{lo}, {hi}]")

    def solids(self) -> list:
        p = self.params
        if self.family == "ellipsoid":
            return [Ellipsoid((0, 0, 0), p)]
        if self.family == "box":
            return [Box((0, 0, 0), p)]
        if self.family == "cross":
            l1, t1, l2, frac = p
            t2 = frac * t1
            return [Box((0, 0, 0), (l1, t1, t1)), Box((0, 0, 0), (t2, l2, t2))]
        r1, h1, r2, h2 = p
        return [Cylinder((0, 0, 0), r1, h1), Cylinder((0, 0, h1), r2, h2)]

    def surface_area(self) -> float:
        """Closed-form area of the union boundary."""
        p = self.params
        parts = self.solids()
        total = sum(s.area() for s in parts)
        if self.family == "cross":
            _, t1, _, frac = p
            t2 = frac * t1
            # bar A boundary inside bar B: 8 t2^2; bar B boundary inside bar A: 16 t1 t2
            return total - 8.0 * t2 * t2 - 16.0 * t1 * t2
        if self.family == "cylinder-composite":
            r1, _, _, h2 = p
            # stem side and top inside the cap, cap bottom inside the stem
            return total - 2.0 * np.pi * r1 * h2 - 2.0 * np.pi * r1 * r1
        return total

    def bounds(self):
        los, his = zip(*(s.bounds() for s in self.solids()))
        return np.min(los, axis=0), np.max(his, axis=0)

    def transform(self) -> BoxTransform:
        return box_transform(*self.bounds())

    def to_json(self) -> dict:
        return {"family": self.family, "params": [float(v) for v in self.params], "category": self.category}

    @classmethod
    def from_json(cls, rec: dict) -> "ShapeSpec":
        return cls(rec["family"], tuple(rec["params"]), int(rec.get("category", 0)))


def random_spec(family: str, rng: np.random.Generator, category: int = 0) -> ShapeSpec:
    ranges = PARAM_RANGES[family]
    params = tuple(float(rng.uniform(lo, hi)) for lo, hi in ranges)
    return ShapeSpec(family, params, category)


def sample_surface_raw(spec: ShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform sample of the union boundary, in the shape's own frame."""
    if n < 1:
        raise GeometryError("need at least one point")
    solids = spec.solids()
    areas = np.array([s.area() for s in solids])
    probs = areas / areas.sum()
    chunks, have = [], 0
    while have < n:
        m = max(64, 2 * (n - have))
        which = rng.choice(len(solids), size=m, p=probs)
        pts = np.empty((m, 3))
        for k, solid in enumerate(solids):
            sel = which == k
            pts[sel] = solid.sample(rng, int(sel.sum()))
        keep = np.ones(m, dtype=bool)
        for k, solid in enumerate(solids):
            keep &= ~((which != k) & solid.inside(pts))
        chunks.append(pts[keep])
        have += int(keep.sum())
    return np.concatenate(chunks)[:n]


def sample_shape_surface(spec: ShapeSpec, n: int, seed) -> np.ndarray:
    """``n`` area-uniform surface points mapped into ``[-1, 1]^3``.

    The box transform comes from the analytic bounding box of the shape, so a
    cloud and a silhouette of the same spec share one coordinate frame.
    """
    rng = np.random.default_rng(seed)
    return spec.transform().apply(sample_surface_raw(spec, n, rng))


# -- rendering ----------------------------------------------------------------
VIEW_EXTENT = 1.75  # half-width of the image plane window; covers the [-1,1]^3 diagonal
_RENDER_POINTS = 40000
_SUPERSAMPLE = 4


def view_basis(azimuth: float, elevation: float) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane right and up axes for a camera on the view sphere."""
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    right = np.array([-sa, ca, 0.0])
    up = np.array([-se * ca, -se * sa, ce])
    return right, up


def project(points: np.ndarray, azimuth: float, elevation: float, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthographic projection to continuous (row, col) pixel coordinates."""
    right, up = view_basis(azimuth, elevation)
    u = points @ right
    v = points @ up
    col = (u / VIEW_EXTENT + 1.0) * 0.5 * resolution
    row = (1.0 - v / VIEW_EXTENT) * 0.5 * resolution
    return row, col


def render_silhouette(spec: ShapeSpec, azimuth: float, elevation: float, resolution: int = 32) -> np.ndarray:
    """Anti-aliased occupancy image ``(resolution, resolution, 1)`` of the normalised shape."""
    if resolution < 8:
        raise GeometryError("resolution must be at least 8")
    pts = sample_shape_surface(spec, _RENDER_POINTS, seed=0)
    hi_res = resolution * _SUPERSAMPLE
    row, col = project(pts, azimuth, elevation, hi_res)
    r = np.floor(row).astype(np.int64)
    c = np.floor(col).astype(np.int64)
    ok = (r >= 0) & (r < hi_res) & (c >= 0) & (c < hi_res)
    grid = np.zeros((hi_res + 2, hi_res + 2), dtype=bool)
    grid[r[ok] + 1, c[ok] + 1] = True
    # 3x3 dilation closes sampling gaps between splats
    dil = np.zeros((hi_res, hi_res), dtype=bool)
    for dr in range(3):
        for dc in range(3):
            dil |= grid[dr:dr + hi_res, dc:dc + hi_res]
    img = dil.reshape(resolution, _SUPERSAMPLE, resolution, _SUPERSAMPLE).mean(axis=(1, 3))
    return img[:, :, None]


def check_image(image, min_size: int = 8) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise GeometryError(f"image must be HxWx1 or HxWx3, got {img.shape}")
    if img.shape[0] < min_size or img.shape[1] < min_size:
        raise GeometryError(f"image {img.shape[:2]} smaller than {min_size}x{min_size}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise GeometryError("image values must lie in [0, 1]")
    return img


def subsample(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points drawn without replacement (with replacement if ``n`` exceeds the cloud)."""
    m = len(points)
    idx = rng.choice(m, size=n, replace=n > m)
    return points[idx]


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + s * k + (1 - c) * (k @ k)
