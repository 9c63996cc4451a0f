"""Input validation helpers shared by the estimator layer and the CLI."""

from __future__ import annotations

import numpy as np

from .pointio import PointCloud


def as_cloud_list(X) -> list[np.ndarray]:
    """Coerce X into a list of (n_i, 3) float64 coordinate arrays.

    Accepts a single (n, 3) array, an (N, n, 3) stack, or a sequence of
    per-cloud arrays (ragged sizes allowed).  Rejects non-finite values,
    wrong trailing dimension, and empty clouds.
    """
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            candidates = [X]
        elif X.ndim == 3:
            candidates = list(X)
        else:
            raise ValueError(f"expected (n, 3), (N, n, 3), or a sequence; got shape {X.shape}")
    else:
        candidates = list(X)
    clouds = []
    for i, item in enumerate(candidates):
        arr = np.asarray(item, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"cloud {i} must be (n, 3), got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError(f"cloud {i} is empty")
        if not np.isfinite(arr).all():
            raise ValueError(f"cloud {i} contains non-finite coordinates")
        clouds.append(arr)
    if not clouds:
        raise ValueError("X contains no clouds")
    return clouds


def as_labels(y, num_clouds: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != num_clouds:
        raise ValueError(f"y must be one label per cloud, got shape {y.shape} for {num_clouds}")
    return y


def as_point_clouds(X, class_ids=None) -> list[PointCloud]:
    clouds = as_cloud_list(X)
    if class_ids is None:
        return [PointCloud(coords=c) for c in clouds]
    return [PointCloud(coords=c, class_id=int(k)) for c, k in zip(clouds, class_ids)]
