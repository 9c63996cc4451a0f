"""Point cloud ingestion, synthetic shape generation, and the .xyz disk format.

The on-disk format is whitespace-separated ASCII, one point per line
(``x y z [f1 ... fc]``); lines whose first non-blank character is ``#`` are
comments.  The writer emits 17 significant digits so doubles round-trip
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHAPE_KINDS = ("sphere", "cube", "torus", "two-planes")

# Unit-max-radius geometry constants for the synthetic surfaces.
_CUBE_HALF_EDGE = 1.0 / np.sqrt(3.0)
_TORUS_MAJOR = 0.75
_TORUS_MINOR = 0.25
_PLANES_HALF_GAP = 0.5
_PLANES_HALF_EDGE = float(np.sqrt((1.0 - _PLANES_HALF_GAP**2) / 2.0))


@dataclass
class PointCloud:
    """A point set with optional per-point features/labels and a whole-cloud class.

    ``coords`` is ``(n, 3)`` float64; ``features`` is ``(n, c)`` or None;
    ``labels`` is ``(n,)`` int or None.
    """

    coords: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    class_id: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must have shape (n, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.coords).all():
            raise ValueError("coords contain non-finite values")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != self.n:
                raise ValueError(
                    f"features must have shape ({self.n}, c), got {self.features.shape}"
                )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ValueError(f"labels must have shape ({self.n},), got {self.labels.shape}")

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labeled synthetic cloud: surface kind, size, noise, seed."""

    shape_kind: str
    n_points: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}; choose from {SHAPE_KINDS}")
        if self.n_points < 8:
            raise ValueError(f"n_points must be >= 8, got {self.n_points}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def load_xyz(path: str | Path) -> PointCloud:
    """Parse an .xyz file into a :class:`PointCloud`.

    Per-point features are populated iff every data line carries the same
    number of extra columns (>= 1).  Raises ``ValueError`` with the offending
    line number on malformed input.
    """
    path = Path(path)
    coords: list[list[float]] = []
    extras: list[list[float]] = []
    n_extra: int | None = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) < 3:
                raise ValueError(f"{path}:{lineno}: expected at least 3 columns, got {len(tokens)}")
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed numeric value in {line!r}") from None
            if n_extra is None:
                n_extra = len(values) - 3
            elif len(values) - 3 != n_extra:
                raise ValueError(
                    f"{path}:{lineno}: inconsistent column count "
                    f"(expected {3 + n_extra}, got {len(values)})"
                )
            coords.append(values[:3])
            extras.append(values[3:])
    if not coords:
        raise ValueError(f"{path}: no data lines found")
    features = np.asarray(extras, dtype=np.float64) if n_extra else None
    return PointCloud(coords=np.asarray(coords, dtype=np.float64), features=features)


def save_xyz(pc: PointCloud, path: str | Path) -> None:
    """Write a cloud as ASCII .xyz with 17 significant digits per value."""
    rows = pc.coords if pc.features is None else np.hstack([pc.coords, pc.features])
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _surface_points(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return v / norms
    if kind == "cube":
        # Pick a face uniformly by area (all equal), then a point on it.
        a = _CUBE_HALF_EDGE
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-a, a, size=(n, 2))
        pts = np.empty((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        for i in range(3):
            mask = axis == i
            others = [j for j in range(3) if j != i]
            pts[mask, i] = sign[mask] * a
            pts[mask, others[0]] = uv[mask, 0]
            pts[mask, others[1]] = uv[mask, 1]
        return pts
    if kind == "torus":
        theta = rng.uniform(0, 2 * np.pi, size=n)
        phi = rng.uniform(0, 2 * np.pi, size=n)
        ring = _TORUS_MAJOR + _TORUS_MINOR * np.cos(phi)
        return np.stack(
            [ring * np.cos(theta), ring * np.sin(theta), _TORUS_MINOR * np.sin(phi)], axis=1
        )
    if kind == "two-planes":
        s, h = _PLANES_HALF_EDGE, _PLANES_HALF_GAP
        xy = rng.uniform(-s, s, size=(n, 2))
        z = np.where(rng.integers(0, 2, size=n) == 0, h, -h)
        return np.column_stack([xy, z])
    raise ValueError(f"unknown shape kind {kind!r}")


def make_synthetic(spec: SyntheticSpec) -> PointCloud:
    """Sample a labeled synthetic cloud, deterministic in the spec's seed.

    The ideal surface is centered at the origin with unit maximum radius;
    isotropic Gaussian noise of std ``noise_sigma`` is added afterwards.
    """
    rng = np.random.default_rng(spec.seed)
    pts = _surface_points(spec.shape_kind, spec.n_points, rng)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    return PointCloud(coords=pts, class_id=SHAPE_KINDS.index(spec.shape_kind))


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    """Center the cloud at the origin and scale it to unit max radius.

    A cloud whose points all coincide maps to all zeros; callers must
    tolerate zero-extent clouds.
    """
    centered = pc.coords - pc.coords.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius > 0:
        centered = centered / radius
    else:
        centered = np.zeros_like(centered)
    return PointCloud(
        coords=centered, features=pc.features, labels=pc.labels, class_id=pc.class_id
    )
