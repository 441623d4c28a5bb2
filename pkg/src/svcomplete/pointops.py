"""Geometric kernels over point sets: farthest point sampling, exact
k-nearest-neighbor search (brute force and an equivalent uniform-grid
path), nearest-distance queries, and the two learned grouping layers
(set abstraction, edge convolution) built from them.

All distance comparisons run on squared Euclidean distances computed as
(dx*dx + dy*dy) + dz*dz so the brute-force path, the grid path, and the
test oracles agree bit for bit. Ties always break to the smaller index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .layers import MLP, Module
from .tensor import Tensor

_CHUNK = 256


def check_cloud(points, name: str = "cloud") -> np.ndarray:
    points = np.asarray(points)
    if points.dtype != np.float32:
        points = points.astype(np.float64, copy=False)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"{name}: expected (N, 3) array, got {points.shape}")
    if points.shape[0] < 1:
        raise ValueError(f"{name}: must contain at least one point")
    if not np.all(np.isfinite(points)):
        raise ValueError(f"{name}: coordinates must be finite")
    return points


@dataclass
class NeighborIndex:
    """Per-query neighbor ids and distances, sorted non-decreasing."""

    indices: np.ndarray  # (N, K) int64
    distances: np.ndarray  # (N, K) float


def _sq_dists(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    d = query[:, None, :] - reference[None, :, :]
    d = d * d
    return (d[:, :, 0] + d[:, :, 1]) + d[:, :, 2]


def fps(points: np.ndarray, m: int) -> np.ndarray:
    """Greedy farthest point sampling.

    Starts at the lexicographically smallest (x, y, z) triple; each
    subsequent pick maximizes the minimum squared distance to the points
    already chosen, ties to the smaller index. Selected points are
    excluded from re-selection, so the result is always m distinct ids.
    """
    points = check_cloud(points)
    n = points.shape[0]
    if m < 1:
        raise ValueError(f"fps: sample count must be >= 1, got {m}")
    if m > n:
        raise ValueError(f"fps: cannot sample {m} from {n} points")
    start = int(np.lexsort((points[:, 2], points[:, 1], points[:, 0]))[0])
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    diff = points - points[start]
    best = (diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) + diff[:, 2] * diff[:, 2]
    best[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(best))
        chosen[i] = nxt
        diff = points - points[nxt]
        d = (diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) + diff[:, 2] * diff[:, 2]
        np.minimum(best, d, out=best)
        best[nxt] = -1.0
    return chosen


def knn(query: np.ndarray, reference: np.ndarray, k: int, use_grid: bool = False) -> NeighborIndex:
    """Exact k nearest reference points for every query point.

    If k exceeds the reference size the nearest point is repeated to pad
    each row to k entries.
    """
    query = check_cloud(query, "query")
    reference = check_cloud(reference, "reference")
    if k < 1:
        raise ValueError(f"knn: k must be >= 1, got {k}")
    n_ref = reference.shape[0]
    kk = min(k, n_ref)
    if use_grid:
        idx, d2 = _grid_knn(query, reference, kk)
    else:
        idx = np.empty((query.shape[0], kk), dtype=np.int64)
        d2 = np.empty((query.shape[0], kk), dtype=query.dtype)
        for lo in range(0, query.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, query.shape[0])
            block = _sq_dists(query[lo:hi], reference)
            order = np.argsort(block, axis=1, kind="stable")[:, :kk]
            idx[lo:hi] = order
            d2[lo:hi] = np.take_along_axis(block, order, axis=1)
    if kk < k:
        pad = k - kk
        idx = np.concatenate([idx, np.repeat(idx[:, :1], pad, axis=1)], axis=1)
        d2 = np.concatenate([d2, np.repeat(d2[:, :1], pad, axis=1)], axis=1)
    return NeighborIndex(indices=idx, distances=np.sqrt(d2))


def min_dist_to_set(x: np.ndarray, y: np.ndarray, use_grid: bool = False) -> np.ndarray:
    """Euclidean distance from each point of x to its nearest point in y."""
    return nearest_in_set(x, y, use_grid=use_grid)[0]


def nearest_assignment(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Nearest-y index per x point via the inner-product expansion.

    Faster than nearest_in_set but the returned distances are not exact,
    so only the assignment is exposed; loss terms recompute distances
    from coordinates. On ties near machine precision the winner may
    differ from nearest_in_set, which no caller relies on.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    y = np.ascontiguousarray(y, dtype=np.float32)
    yy = np.einsum("ij,ij->i", y, y)
    out = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], 2048):
        hi = min(lo + 2048, x.shape[0])
        scores = x[lo:hi] @ y.T
        scores *= -2.0
        scores += yy[None, :]
        out[lo:hi] = np.argmin(scores, axis=1)
    return out


def nearest_in_set(x: np.ndarray, y: np.ndarray, use_grid: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(distances, indices) of the nearest y point for each x point."""
    x = check_cloud(x, "x")
    y = check_cloud(y, "y")
    if use_grid:
        idx, d2 = _grid_knn(x, y, 1)
        return np.sqrt(d2[:, 0]), idx[:, 0]
    dist = np.empty(x.shape[0], dtype=x.dtype)
    idx = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, x.shape[0])
        block = _sq_dists(x[lo:hi], y)
        best = np.argmin(block, axis=1)
        idx[lo:hi] = best
        dist[lo:hi] = np.sqrt(block[np.arange(hi - lo), best])
    return dist, idx


# -- uniform-grid accelerator ----------------------------------------------


def _grid_knn(query: np.ndarray, reference: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid-bucketed exact knn; agrees with the brute-force path bit for bit.

    Cells are visited in expanding rings; the search stops only when the
    closest possible point in the next ring is strictly farther than the
    current k-th best, so equal-distance candidates in farther cells are
    still collected before tie-breaking on index.
    """
    n_ref = reference.shape[0]
    lo = reference.min(axis=0)
    hi = reference.max(axis=0)
    span = float(np.max(hi - lo))
    # aim for a handful of points per cell
    ncell = max(1, int(np.ceil((n_ref / 4.0) ** (1.0 / 3.0))))
    cell = span / ncell if span > 0 else 1.0
    coords = np.clip(((reference - lo) / cell).astype(np.int64), 0, ncell - 1)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i, c in enumerate(map(tuple, coords)):
        buckets.setdefault(c, []).append(i)

    q_cells = np.clip(((query - lo) / cell).astype(np.int64), 0, ncell - 1)
    out_idx = np.empty((query.shape[0], k), dtype=np.int64)
    out_d2 = np.empty((query.shape[0], k), dtype=query.dtype)
    for qi in range(query.shape[0]):
        q = query[qi]
        cq = q_cells[qi]
        cand: list[int] = []
        ring = 0
        kth_best = np.inf
        while True:
            ids = _ring_points(buckets, cq, ring, ncell)
            if ids:
                cand.extend(ids)
                if len(cand) >= k:
                    d = query[qi : qi + 1] - reference[cand]
                    d2 = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
                    kth_best = np.partition(d2, k - 1)[k - 1]
            ring += 1
            if ring > 3 * ncell:
                break
            # nearest approach of any cell in the next ring
            ring_gap = (ring - 1) * cell
            lower = 0.0 if ring == 1 else ring_gap * ring_gap
            if len(cand) >= k and lower > kth_best:
                break
        cand_arr = np.sort(np.asarray(cand, dtype=np.int64))
        d = query[qi] - reference[cand_arr]
        d2 = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
        order = np.argsort(d2, kind="stable")[:k]
        out_idx[qi] = cand_arr[order]
        out_d2[qi] = d2[order]
    return out_idx, out_d2


def _ring_points(buckets, center, ring: int, ncell: int) -> list[int]:
    ids: list[int] = []
    r = ring
    x0, y0, z0 = int(center[0]), int(center[1]), int(center[2])
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                if max(abs(dx), abs(dy), abs(dz)) != r:
                    continue
                cx, cy, cz = x0 + dx, y0 + dy, z0 + dz
                if 0 <= cx < ncell and 0 <= cy < ncell and 0 <= cz < ncell:
                    got = buckets.get((cx, cy, cz))
                    if got:
                        ids.extend(got)
    return ids


# -- learned grouping layers -------------------------------------------------


class SetAbstraction(Module):
    """FPS centroids + knn grouping + shared MLP + channelwise max pool.

    mlp_dims are output channel counts; the MLP input is the 3-vector
    offset to the centroid concatenated with the neighbor feature. With
    n_out=None the layer pools every point into a single vector (offsets
    taken from the centroid mean).
    """

    def __init__(self, rng, in_dim: int, mlp_dims: Sequence[int],
                 n_out: Optional[int] = None, k: int = 16):
        self.mlp = MLP(rng, [in_dim + 3, *mlp_dims], final_act=True)
        self.n_out = n_out
        self.k = k
        self.in_dim = in_dim

    def __call__(self, xyz: np.ndarray, feats: Optional[Tensor],
                 cache: Optional[dict] = None) -> tuple[np.ndarray, Tensor]:
        # the grouping geometry depends only on coordinates, so repeated
        # passes over a fixed cloud can reuse it via `cache`
        if self.n_out is None:
            centroid = xyz.mean(axis=0)
            rel = Tensor((xyz - centroid).astype(T.default_dtype()))
            grouped = rel if feats is None else T.concat([rel, feats], axis=1)
            pooled = T.max_reduce(self.mlp(grouped), axis=0)
            return centroid[None, :], T.reshape(pooled, (1, -1))
        if cache is not None and "centroids" in cache:
            centroids, indices, rel = cache["centroids"], cache["indices"], cache["rel"]
        else:
            centro_idx = fps(xyz, self.n_out)
            centroids = xyz[centro_idx]
            indices = knn(centroids, xyz, self.k).indices
            rel = (xyz[indices] - centroids[:, None, :]).reshape(-1, 3).astype(T.default_dtype())
            if cache is not None:
                cache.update(centroids=centroids, indices=indices, rel=rel)
        rel_t = Tensor(rel)
        if feats is None:
            grouped = rel_t
        else:
            neighbor_feats = T.gather_rows(feats, indices.reshape(-1))
            grouped = T.concat([rel_t, neighbor_feats], axis=1)
        out = self.mlp(grouped)
        out = T.reshape(out, (self.n_out, self.k, -1))
        return centroids, T.max_reduce(out, axis=1)


class EdgeConv(Module):
    """Per-point feature from max-pooled MLP over (f_i, f_j - f_i) edges.

    Neighbors come from coordinate space when coords are passed (first
    layer), otherwise from the current feature space.
    """

    def __init__(self, rng, in_dim: int, mlp_dims: Sequence[int], k: int = 16):
        self.mlp = MLP(rng, [2 * in_dim, *mlp_dims], final_act=True)
        self.k = k
        self.in_dim = in_dim

    def __call__(self, feats: Tensor, coords: Optional[np.ndarray] = None,
                 neighbor_idx: Optional[np.ndarray] = None) -> Tensor:
        n = feats.shape[0]
        if neighbor_idx is not None:
            indices = neighbor_idx
        elif coords is not None:
            indices = knn(coords, coords, self.k).indices
        else:
            space = np.ascontiguousarray(feats.data, dtype=np.float64)
            indices = _feature_knn(space, self.k).indices
        neighbor = T.gather_rows(feats, indices.reshape(-1))
        center = T.gather_rows(feats, np.repeat(np.arange(n), indices.shape[1]))
        edge = T.concat([center, neighbor - center], axis=1)
        out = self.mlp(edge)
        out = T.reshape(out, (n, indices.shape[1], -1))
        return T.max_reduce(out, axis=1)


def _feature_knn(space: np.ndarray, k: int) -> NeighborIndex:
    """knn in an arbitrary-dimensional feature space (brute force)."""
    n = space.shape[0]
    kk = min(k, n)
    idx = np.empty((n, kk), dtype=np.int64)
    chunk = max(1, (1 << 22) // max(1, n * space.shape[1]))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = space[lo:hi, None, :] - space[None, :, :]
        d2 = np.einsum("ijc,ijc->ij", diff, diff)
        idx[lo:hi] = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    if kk < k:
        idx = np.concatenate([idx, np.repeat(idx[:, :1], k - kk, axis=1)], axis=1)
    return NeighborIndex(indices=idx, distances=np.zeros_like(idx, dtype=space.dtype))
