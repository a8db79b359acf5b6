"""Nearest-neighbour and assignment kernels with a compiled fast path.

The Cython extension ``_kernels`` is used when it has been built; otherwise
(or with ``FLOWRECON_PURE_PYTHON=1`` set) the numpy implementations below run
the same algorithms.  ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    if os.environ.get("FLOWRECON_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"
LEAF_SIZE = 8


def available_backends() -> tuple[str, ...]:
    return ("cython", "python") if _ext is not None else ("python",)


def set_backend(name: str) -> str:
    """Switch the active implementation; returns the previous one."""
    global BACKEND
    if name not in available_backends():
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev, BACKEND = BACKEND, name
    return prev


def sqdist_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distance between matching rows, summed x, y, z in that order."""
    dx = a[:, 0] - b[:, 0]
    dy = a[:, 1] - b[:, 1]
    dz = a[:, 2] - b[:, 2]
    return dx * dx + dy * dy + dz * dz


def brute_nearest(queries: np.ndarray, points: np.ndarray, block: int = 512):
    """O(N*M) nearest neighbour; the reference every index is checked against."""
    q = np.ascontiguousarray(queries, dtype=np.float64)
    p = np.ascontiguousarray(points, dtype=np.float64)
    best_d = np.empty(len(q))
    best_i = np.empty(len(q), dtype=np.intp)
    for s in range(0, len(q), block):
        qb = q[s:s + block]
        dx = qb[:, None, 0] - p[None, :, 0]
        dy = qb[:, None, 1] - p[None, :, 1]
        dz = qb[:, None, 2] - p[None, :, 2]
        d = dx * dx + dy * dy + dz * dz
        idx = np.argmin(d, axis=1)
        best_i[s:s + block] = idx
        best_d[s:s + block] = d[np.arange(len(qb)), idx]
    return best_d, best_i


class KDTree:
    """Static 3-d kd-tree over ``points`` (median splits, leaves of ``LEAF_SIZE``).

    Invariant: points in a left subtree have split coordinate <= the split
    value, points in a right subtree >=, so pruning by the squared gap is exact.
    """

    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        n = len(self.points)
        if n == 0:
            raise ValueError("cannot index an empty cloud")
        self.perm = np.arange(n, dtype=np.intp)
        dims, vals, lefts, rights, starts, stops = [], [], [], [], [], []

        def new_node(lo, hi):
            dims.append(-1)
            vals.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            starts.append(lo)
            stops.append(hi)
            return len(dims) - 1

        root = new_node(0, n)
        work = [root]
        while work:
            node = work.pop()
            lo, hi = starts[node], stops[node]
            if hi - lo <= LEAF_SIZE:
                continue
            idx = self.perm[lo:hi]
            pts = self.points[idx]
            spread = pts.max(axis=0) - pts.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                continue
            mid = (hi - lo) // 2
            order = np.argpartition(pts[:, dim], mid, kind="introselect")
            self.perm[lo:hi] = idx[order]
            split = float(self.points[self.perm[lo + mid], dim])
            dims[node] = dim
            vals[node] = split
            lefts[node] = new_node(lo, lo + mid)
            rights[node] = new_node(lo + mid, hi)
            work.extend((lefts[node], rights[node]))
        self.split_dim = np.array(dims, dtype=np.intp)
        self.split_val = np.array(vals, dtype=np.float64)
        self.left = np.array(lefts, dtype=np.intp)
        self.right = np.array(rights, dtype=np.intp)
        self.start = np.array(starts, dtype=np.intp)
        self.stop = np.array(stops, dtype=np.intp)

    def query(self, queries: np.ndarray):
        """Exact nearest neighbour: ``(squared distances, indices)``."""
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if BACKEND == "cython":
            return _ext.kdtree_query(q, self.points, self.perm, self.split_dim, self.split_val,
                                     self.left, self.right, self.start, self.stop)
        return self._query_py(q)

    def _query_py(self, q: np.ndarray):
        best_d = np.empty(len(q))
        best_i = np.empty(len(q), dtype=np.intp)
        pts, perm = self.points, self.perm
        for n in range(len(q)):
            x = q[n]
            bd, bi = np.inf, -1
            stack = [(0, 0.0)]
            while stack:
                node, gap = stack.pop()
                if gap > bd:
                    continue
                dim = self.split_dim[node]
                if dim < 0:
                    ids = perm[self.start[node]:self.stop[node]]
                    d = sqdist_pairs(np.broadcast_to(x, (len(ids), 3)), pts[ids])
                    k = int(np.argmin(d))
                    if d[k] < bd or (d[k] == bd and ids[k] < bi):
                        # lowest index among exact ties inside the leaf
                        ties = ids[d == d[k]]
                        bd, bi = d[k], int(ties.min())
                    continue
                diff = x[dim] - self.split_val[node]
                near, far = (self.left[node], self.right[node]) if diff < 0 else (self.right[node], self.left[node])
                stack.append((far, diff * diff))
                stack.append((near, 0.0))
            best_d[n] = bd
            best_i[n] = bi
        return best_d, best_i


def nearest(queries: np.ndarray, points: np.ndarray):
    return KDTree(points).query(queries)


@dataclass(frozen=True)
class AuctionParams:
    """Epsilon-scaling schedule: start at max cost / 2, divide by ``eps_factor`` down to ``eps_final``."""
    eps_final: float = 1e-4
    eps_factor: float = 5.0
    max_bids: int = 200_000_000


class AuctionDidNotConverge(RuntimeError):
    def __init__(self, eps: float, bids: int):
        super().__init__(f"auction hit the bid cap ({bids} bids) at epsilon={eps:g}")
        self.eps = eps
        self.bids = bids


def auction(cost: np.ndarray, params: AuctionParams = AuctionParams()):
    """Near-optimal assignment for a square min-cost matrix.

    Total cost is within ``n * eps_final`` of the optimum.  Returns
    ``(row_to_col, bids)``.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got {c.shape}")
    if BACKEND == "cython":
        assign, eps, bids = _ext.auction_assign(c, params.eps_final, params.eps_factor, params.max_bids)
    else:
        assign, eps, bids = _auction_py(c, params)
    if bids < 0:
        raise AuctionDidNotConverge(eps, -bids)
    return np.asarray(assign), bids


def _auction_py(c: np.ndarray, params: AuctionParams):
    n = len(c)
    if n <= 1:
        return np.zeros(n, dtype=np.intp), params.eps_final, 0
    price = np.zeros(n)
    eps = max(c.max() / 2.0, params.eps_final)
    bids = 0
    while True:
        row_to_col = np.full(n, -1, dtype=np.intp)
        col_to_row = np.full(n, -1, dtype=np.intp)
        queue = list(range(n))
        head = 0
        while head < len(queue):
            i = queue[head]
            head += 1
            v = -c[i] - price
            j = int(np.argmax(v))
            w1 = v[j]
            v[j] = -np.inf
            w2 = v.max()
            price[j] += w1 - w2 + eps
            prev = col_to_row[j]
            col_to_row[j] = i
            row_to_col[i] = j
            if prev >= 0:
                row_to_col[prev] = -1
                queue.append(prev)
            bids += 1
            if bids > params.max_bids:
                return row_to_col, eps, -bids
        if eps <= params.eps_final:
            return row_to_col, eps, bids
        eps = max(eps / params.eps_factor, params.eps_final)
