"""Transition down/up primitives: farthest point sampling, inverse-distance
interpolation, and voxel grid pooling/unpooling.

Selection indices, neighbor lists, and voxel assignments are computed in
plain numpy and treated as constants of the step: gradients flow through
features only.  Feature arguments may be Tensors (differentiable path) or
ndarrays (plain numeric path); the return type follows the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .ops import gather_rows, knn_interp, segment_mean

_COINCIDENT_D2 = 1e-24  # squared form of the d < 1e-12 coincidence rule


@dataclass
class Resampling:
    """Record of one down/up transition: FPS picks or a voxel assignment."""

    selected: np.ndarray | None = None
    assignment: np.ndarray | None = None
    k_neighbors: int = 3
    grid_size: float | None = None

    def __post_init__(self):
        if (self.selected is None) == (self.assignment is None):
            raise ValueError("exactly one of selected/assignment must be set")
        if self.selected is not None:
            self.selected = np.asarray(self.selected, dtype=np.int64)
            if len(np.unique(self.selected)) != len(self.selected):
                raise ValueError("selected indices must be distinct")
        else:
            self.assignment = np.asarray(self.assignment, dtype=np.int64)
            if self.grid_size is None or self.grid_size <= 0:
                raise ValueError("grid transitions need grid_size > 0")
        if self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")


def fps(coords: np.ndarray, m: int) -> np.ndarray:
    """Greedy farthest point sampling, seeded at index 0.

    Each pick maximizes the minimum distance to the already-selected set;
    ties resolve to the smallest index.  Distances are tracked as an
    incrementally-updated minimum, which matches a from-scratch recompute
    exactly (min over identical floats involves no rounding).
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in 1..{n}, got {m}")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = 0
    d2 = ((coords - coords[0]) ** 2).sum(axis=1)
    for i in range(1, m):
        pick = int(np.argmax(d2))
        selected[i] = pick
        d2 = np.minimum(d2, ((coords - coords[pick]) ** 2).sum(axis=1))
    return selected


def interp_weights(
    src_coords: np.ndarray, dst_coords: np.ndarray, k: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """k-nearest sources per destination plus normalized 1/(d^2+1e-8) weights.

    A destination within 1e-12 of a source copies that source exactly (its
    weight is 1); among coincident sources the smallest index wins.
    """
    src = np.asarray(src_coords, dtype=np.float64)
    dst = np.asarray(dst_coords, dtype=np.float64)
    if src.shape[0] < 1:
        raise ValueError("interpolation needs at least one source point")
    k = min(k, src.shape[0])
    d2 = ((dst[:, None, :] - src[None, :, :]) ** 2).sum(axis=-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    d2k = np.take_along_axis(d2, idx, axis=1)
    w = 1.0 / (d2k + 1e-8)
    w = w / w.sum(axis=1, keepdims=True)
    hit = d2k < _COINCIDENT_D2
    rows = np.where(hit.any(axis=1))[0]
    if rows.size:
        w[rows] = 0.0
        first = hit[rows].argmax(axis=1)
        w[rows, first] = 1.0
    return idx, w


def interp_up(src_coords, src_feats, dst_coords, k: int = 3):
    """Inverse-distance interpolation of source features onto destinations."""
    idx, w = interp_weights(src_coords, dst_coords, k=k)
    if isinstance(src_feats, Tensor):
        return knn_interp(src_feats, idx, w)
    src = np.asarray(src_feats, dtype=np.float64)
    return (src[idx] * w[..., None]).sum(axis=1)


def _voxel_assignment(coords: np.ndarray, grid_size: float) -> tuple[np.ndarray, int]:
    keys = np.floor(coords / grid_size).astype(np.int64)
    _, first_idx, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # np.unique sorts voxel keys; re-rank rows by first occurrence so output
    # order is the deterministic order points arrive in.
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse], len(first_idx)


def grid_pool(coords, feats, grid_size: float):
    """Mean-pool features per voxel of edge ``grid_size``.

    Returns (pooled_coords, pooled_feats, assignment): voxel centroids,
    voxel feature means, and each source point's output row.  Output rows
    are ordered by first occurrence of their voxel.
    """
    if grid_size <= 0:
        raise ValueError(f"grid_size must be > 0, got {grid_size}")
    coords = np.asarray(coords, dtype=np.float64)
    assignment, m = _voxel_assignment(coords, grid_size)
    counts = np.bincount(assignment, minlength=m).astype(np.float64)
    sums = np.zeros((m, 3))
    np.add.at(sums, assignment, coords)
    pooled_coords = sums / counts[:, None]
    if isinstance(feats, Tensor):
        pooled_feats = segment_mean(feats, assignment, m)
    else:
        f = np.asarray(feats, dtype=np.float64)
        fs = np.zeros((m,) + f.shape[1:])
        np.add.at(fs, assignment, f)
        pooled_feats = fs / counts.reshape((-1,) + (1,) * (f.ndim - 1))
    return pooled_coords, pooled_feats, assignment


def grid_unpool(pooled_feats, assignment):
    """Broadcast each voxel's pooled feature back to its source points."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if isinstance(pooled_feats, Tensor):
        return gather_rows(pooled_feats, assignment)
    pooled = np.asarray(pooled_feats)
    if assignment.size and (assignment.min() < 0 or assignment.max() >= pooled.shape[0]):
        raise ValueError(f"assignment index out of range [0, {pooled.shape[0]})")
    return pooled[assignment]
