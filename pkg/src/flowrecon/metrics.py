"""Point-cloud similarity metrics: Chamfer, EMD (exact and auction), F1@tau.

Conventions: Chamfer is the sum of the two directed means of *squared*
nearest-neighbour distances; EMD is the *mean* Euclidean cost of the optimal
bijection; F1 thresholds squared nearest-neighbour distance at ``tau``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import GeometryError, check_cloud, normalize_to_box
from .kernels import AuctionParams, auction, brute_nearest, nearest

EXACT_EMD_LIMIT = 512
DEFAULT_TAU = 1e-3


class MetricError(ValueError):
    pass


def _pair(a, b):
    try:
        return check_cloud(a, "a"), check_cloud(b, "b")
    except GeometryError as exc:
        raise MetricError(str(exc)) from None


def chamfer(a, b) -> float:
    a, b = _pair(a, b)
    d_ab, _ = nearest(a, b)
    d_ba, _ = nearest(b, a)
    return float(d_ab.mean() + d_ba.mean())


def chamfer_brute(a, b) -> float:
    a, b = _pair(a, b)
    return float(brute_nearest(a, b)[0].mean() + brute_nearest(b, a)[0].mean())


def distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class AssignmentPlan:
    permutation: np.ndarray  # a[i] is matched with b[permutation[i]]
    cost: float              # total Euclidean cost under the permutation


def _equal_sizes(a, b):
    a, b = _pair(a, b)
    if len(a) != len(b):
        raise MetricError(f"EMD needs equal-size clouds, got {len(a)} and {len(b)}")
    return a, b


def emd_exact(a, b, limit: int = EXACT_EMD_LIMIT) -> tuple[float, AssignmentPlan]:
    """Mean cost of the optimal assignment (Jonker-Volgenant on the dense matrix)."""
    a, b = _equal_sizes(a, b)
    if len(a) > limit:
        raise MetricError(f"{len(a)} points exceeds the exact solver limit {limit}; use emd_approx")
    cost = distance_matrix(a, b)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(a), dtype=np.intp)
    perm[rows] = cols
    total = float(cost[np.arange(len(a)), perm].sum())
    return total / len(a), AssignmentPlan(perm, total)


def emd_approx(a, b, params: AuctionParams = AuctionParams()) -> float:
    """Mean cost of an auction assignment.

    Feasible, so never below the exact EMD, and at most ``params.eps_final``
    above it (per-item slack ``eps`` averaged over ``n`` items).
    """
    a, b = _equal_sizes(a, b)
    cost = distance_matrix(a, b)
    perm, _ = auction(cost, params)
    return float(cost[np.arange(len(a)), perm].mean())


def emd(a, b, limit: int = EXACT_EMD_LIMIT, params: AuctionParams = AuctionParams()) -> float:
    a, b = _equal_sizes(a, b)
    if len(a) <= limit:
        return emd_exact(a, b, limit)[0]
    return emd_approx(a, b, params)


def f1_score(pred, gt, tau: float = DEFAULT_TAU) -> tuple[float, float, float]:
    """(precision, recall, f1) with a point counted correct when its squared NN distance <= tau."""
    if not tau > 0:
        raise MetricError("tau must be positive")
    pred, gt = _pair(pred, gt)
    d_pg, _ = nearest(pred, gt)
    d_gp, _ = nearest(gt, pred)
    precision = float(np.mean(d_pg <= tau))
    recall = float(np.mean(d_gp <= tau))
    f1 = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass(frozen=True)
class MetricReport:
    cd: float
    emd: float
    f1: float
    count: int = 1

    @property
    def cd_e3(self) -> float:
        return self.cd * 1e3

    @property
    def emd_e2(self) -> float:
        return self.emd * 1e2

    @property
    def f1_pct(self) -> float:
        return self.f1 * 100.0

    def to_json(self) -> dict:
        return {"cd_raw": self.cd, "emd_raw": self.emd, "f1_raw": self.f1,
                "cd_e3": self.cd_e3, "emd_e2": self.emd_e2, "f1_pct": self.f1_pct, "count": self.count}


def _match_sizes(pred: np.ndarray, gt: np.ndarray, rng: np.random.Generator):
    # EMD needs a bijection: subsample the larger cloud without replacement
    if len(pred) > len(gt):
        pred = pred[np.sort(rng.choice(len(pred), len(gt), replace=False))]
    elif len(gt) > len(pred):
        gt = gt[np.sort(rng.choice(len(gt), len(pred), replace=False))]
    return pred, gt


def pair_metrics(pred, gt, tau: float = DEFAULT_TAU, with_emd: bool = True,
                 params: AuctionParams = AuctionParams(), seed: int = 0) -> tuple[float, float, float]:
    """Normalise both clouds to the [-1, 1] box, then (cd, emd, f1)."""
    p, _ = normalize_to_box(pred)
    g, _ = normalize_to_box(gt)
    cd = chamfer(p, g)
    f1 = f1_score(p, g, tau)[2]
    e = math.nan
    if with_emd:
        pe, ge = _match_sizes(p, g, np.random.default_rng(seed))
        e = emd(pe, ge, params=params)
    return cd, e, f1


def mean_report(rows) -> MetricReport:
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if len(rows) == 0:
        raise MetricError("no metric rows to aggregate")
    # math.fsum keeps the mean independent of row order
    m = [math.fsum(rows[:, k]) / len(rows) for k in range(3)]
    return MetricReport(m[0], m[1], m[2], count=len(rows))


def evaluate_pairs(preds, gts, tau: float = DEFAULT_TAU, with_emd: bool = True,
                   params: AuctionParams = AuctionParams()) -> MetricReport:
    if len(preds) != len(gts):
        raise MetricError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    rows = []
    for k, (p, g) in enumerate(zip(preds, gts)):
        try:
            rows.append(pair_metrics(p, g, tau, with_emd, params, seed=k))
        except (MetricError, GeometryError) as exc:
            raise MetricError(f"pair {k}: {exc}") from exc
    return mean_report(rows)


def format_table(rows: dict, title: str = "") -> str:
    """Aligned text table; ``rows`` maps a label to a MetricReport."""
    head = f"{'':<24}{'CD(x1e3)':>12}{'EMD(x1e2)':>12}{'F1(%)':>10}"
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for label, r in rows.items():
        lines.append(f"{label:<24}{r.cd_e3:>12.3f}{r.emd_e2:>12.3f}{r.f1_pct:>10.2f}")
    return "\n".join(lines)


def report_json(report: MetricReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True)
