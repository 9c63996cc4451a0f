"""Space-filling-curve codecs and point-cloud serialization.

Two curve families over a 2^bits cubic grid:

* Hilbert, via Skilling's transpose construction (Gray coding plus per-level
  bit exchanges), chosen for locality: consecutive indices are always one
  unit step apart.
* Z-order (Morton), plain bit interleaving, cheap but with long jumps.

Each curve comes in six axis-priority variants (coordinate permutations).
``serialize`` quantizes a cloud to the grid, encodes each cell, and sorts
points by curve index, giving the causal sequence the scan kernels consume.
``make_shuffle_plan`` assigns variants to blocks: fixed, sequential cycling,
or seeded uniform draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pointio import PointCloud

CURVE_KINDS = ("hilbert", "zorder")

# The six traversal priorities, in the canonical cycling order.
AXIS_PRIORITIES = ("xyz", "yxz", "xzy", "zxy", "yzx", "zyx")

MAX_BITS = 20  # 3*20 index bits must fit in uint64

_AXIS_OF_LETTER = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class CurveVariant:
    """One curve family plus the axis order it traverses first-to-last."""

    curve: str = "hilbert"
    axis_priority: str = "xyz"

    def __post_init__(self):
        if self.curve not in CURVE_KINDS:
            raise ValueError(f"unknown curve {self.curve!r}; choose from {CURVE_KINDS}")
        if self.axis_priority not in AXIS_PRIORITIES:
            raise ValueError(
                f"axis_priority must be a permutation of xyz, got {self.axis_priority!r}"
            )

    @property
    def name(self) -> str:
        return f"{self.curve}_{self.axis_priority}"


HILBERT_VARIANTS = tuple(CurveVariant("hilbert", p) for p in AXIS_PRIORITIES)
ZORDER_VARIANTS = tuple(CurveVariant("zorder", p) for p in AXIS_PRIORITIES)


def _check_bits(bits: int) -> int:
    if not 1 <= int(bits) <= MAX_BITS:
        raise ValueError(f"bits must be in 1..{MAX_BITS}, got {bits}")
    return int(bits)


def _as_cells(cell, bits: int) -> tuple[np.ndarray, bool]:
    """Validate and lift a cell triple or (..., 3) array to (n, 3) uint64."""
    arr = np.asarray(cell)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"cells must have trailing dimension 3, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("cell coordinates must be integers")
        arr = arr.astype(np.int64)
    scalar = arr.ndim == 1
    flat = arr.reshape(-1, 3)
    limit = 1 << bits
    if flat.size and (np.any(np.asarray(flat, dtype=np.int64) < 0) or np.any(flat >= limit)):
        raise ValueError(f"cell coordinate out of range [0, 2^{bits})")
    return flat.astype(np.uint64), scalar


def _as_codes(index, bits: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(index)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("curve indices must be integers")
        arr = arr.astype(np.int64)
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr)
    limit = 1 << (3 * bits)
    if flat.size and (np.any(np.asarray(flat, dtype=np.int64) < 0) or np.any(flat >= limit)):
        raise ValueError(f"curve index out of range [0, 8^{bits})")
    return flat.astype(np.uint64), scalar


# Morton bit spreading: move bit k of a 21-bit word to bit 3k.  The compact
# step for shift s must use the mask that held before the <<s spread stage,
# so the two chains are spelled out separately.
_SPREAD_STEPS = (
    (np.uint64(32), np.uint64(0x1F00000000FFFF)),
    (np.uint64(16), np.uint64(0x1F0000FF0000FF)),
    (np.uint64(8), np.uint64(0x100F00F00F00F00F)),
    (np.uint64(4), np.uint64(0x10C30C30C30C30C3)),
    (np.uint64(2), np.uint64(0x1249249249249249)),
)
_COMPACT_STEPS = (
    (np.uint64(2), np.uint64(0x10C30C30C30C30C3)),
    (np.uint64(4), np.uint64(0x100F00F00F00F00F)),
    (np.uint64(8), np.uint64(0x1F0000FF0000FF)),
    (np.uint64(16), np.uint64(0x1F00000000FFFF)),
    (np.uint64(32), np.uint64(0x1FFFFF)),
)


def _spread3(v: np.ndarray) -> np.ndarray:
    x = v & np.uint64(0x1FFFFF)
    for shift, mask in _SPREAD_STEPS:
        x = (x | (x << shift)) & mask
    return x


def _compact3(v: np.ndarray) -> np.ndarray:
    x = v & np.uint64(0x1249249249249249)
    for shift, mask in _COMPACT_STEPS:
        x = (x ^ (x >> shift)) & mask
    return x


def _interleave(cells: np.ndarray) -> np.ndarray:
    # Column 0 lands in the most significant bit of each 3-bit group.
    return (
        (_spread3(cells[:, 0]) << np.uint64(2))
        | (_spread3(cells[:, 1]) << np.uint64(1))
        | _spread3(cells[:, 2])
    )


def _deinterleave(codes: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            _compact3(codes >> np.uint64(2)),
            _compact3(codes >> np.uint64(1)),
            _compact3(codes),
        ],
        axis=1,
    )


def _axes_to_transpose(x: np.ndarray, bits: int) -> np.ndarray:
    """Skilling forward pass: grid axes -> transpose words, in place."""
    one = np.uint64(1)
    q = one << np.uint64(bits - 1)
    while q > one:
        p = q - one
        for i in range(3):
            hi = (x[:, i] & q) != 0
            lo = ~hi
            x[hi, 0] ^= p
            swap = (x[lo, 0] ^ x[lo, i]) & p
            x[lo, 0] ^= swap
            x[lo, i] ^= swap
        q >>= one
    # Gray encode, then smear the top word's low bits back across all axes.
    x[:, 1] ^= x[:, 0]
    x[:, 2] ^= x[:, 1]
    t = np.zeros(x.shape[0], dtype=np.uint64)
    q = one << np.uint64(bits - 1)
    while q > one:
        sel = (x[:, 2] & q) != 0
        t[sel] ^= q - one
        q >>= one
    x ^= t[:, None]
    return x


def _transpose_to_axes(x: np.ndarray, bits: int) -> np.ndarray:
    """Skilling inverse pass: transpose words -> grid axes, in place."""
    one = np.uint64(1)
    n_cells = one << np.uint64(bits)
    t = x[:, 2] >> one
    x[:, 2] ^= x[:, 1]
    x[:, 1] ^= x[:, 0]
    x[:, 0] ^= t
    q = np.uint64(2)
    while q != n_cells:
        p = q - one
        for i in (2, 1, 0):
            hi = (x[:, i] & q) != 0
            lo = ~hi
            x[hi, 0] ^= p
            swap = (x[lo, 0] ^ x[lo, i]) & p
            x[lo, 0] ^= swap
            x[lo, i] ^= swap
        q <<= one
    return x


def hilbert_encode(cell, bits: int):
    """Map grid cells to Hilbert indices; index 0 is cell (0,0,0).

    Accepts one (u,v,w) triple or an (..., 3) integer array; returns an int
    or a matching uint64 array.
    """
    bits = _check_bits(bits)
    cells, scalar = _as_cells(cell, bits)
    codes = _interleave(_axes_to_transpose(cells.copy(), bits))
    return int(codes[0]) if scalar else codes


def hilbert_decode(index, bits: int):
    """Inverse of :func:`hilbert_encode`."""
    bits = _check_bits(bits)
    codes, scalar = _as_codes(index, bits)
    cells = _transpose_to_axes(_deinterleave(codes), bits)
    return tuple(int(v) for v in cells[0]) if scalar else cells


def zorder_encode(cell, bits: int):
    """Bit-interleave grid cells, first column most significant per group."""
    bits = _check_bits(bits)
    cells, scalar = _as_cells(cell, bits)
    codes = _interleave(cells)
    return int(codes[0]) if scalar else codes


def zorder_decode(index, bits: int):
    """Inverse of :func:`zorder_encode`."""
    bits = _check_bits(bits)
    codes, scalar = _as_codes(index, bits)
    cells = _deinterleave(codes)
    return tuple(int(v) for v in cells[0]) if scalar else cells


def apply_variant(cell, variant: CurveVariant, inverse: bool = False):
    """Permute (x,y,z) cells into the variant's traversal order (or back).

    The base codecs treat their first column as highest priority, so a
    variant is exactly a column permutation applied before encoding and
    undone after decoding.
    """
    arr = np.asarray(cell)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"cells must have trailing dimension 3, got shape {arr.shape}")
    perm = [_AXIS_OF_LETTER[c] for c in variant.axis_priority]
    if inverse:
        out = np.empty_like(arr)
        out[..., perm] = arr
    else:
        out = arr[..., perm]
    if isinstance(cell, tuple):
        return tuple(out.tolist())
    return out


def curve_encode(cell, bits: int, variant: CurveVariant):
    """Encode under a variant: permute axes to priority order, then encode."""
    permuted = apply_variant(np.asarray(cell), variant)
    if variant.curve == "hilbert":
        return hilbert_encode(permuted, bits)
    return zorder_encode(permuted, bits)


def curve_decode(index, bits: int, variant: CurveVariant):
    """Inverse of :func:`curve_encode`."""
    if variant.curve == "hilbert":
        permuted = hilbert_decode(index, bits)
    else:
        permuted = zorder_decode(index, bits)
    out = apply_variant(np.asarray(permuted), variant, inverse=True)
    return tuple(int(v) for v in out) if np.asarray(index).ndim == 0 else out


@dataclass(frozen=True)
class CurveCode:
    """A matched (cell, index) pair under one variant at a given order."""

    cell: tuple[int, int, int]
    index: int
    bits: int
    variant: CurveVariant = field(default_factory=CurveVariant)

    def __post_init__(self):
        expected = curve_encode(self.cell, self.bits, self.variant)
        if expected != self.index:
            raise ValueError(
                f"cell {self.cell} encodes to {expected} under {self.variant.name}, "
                f"not {self.index}"
            )

    @classmethod
    def from_cell(cls, cell, bits: int, variant: CurveVariant = CurveVariant()) -> "CurveCode":
        return cls(tuple(int(v) for v in cell), curve_encode(cell, bits, variant), bits, variant)

    @classmethod
    def from_index(cls, index: int, bits: int, variant: CurveVariant = CurveVariant()) -> "CurveCode":
        return cls(curve_decode(index, bits, variant), int(index), bits, variant)


def quantize_to_grid(coords: np.ndarray, bits: int) -> np.ndarray:
    """Affine-map coords into the 2^bits cell grid over their bounding box.

    Degenerate axes (zero extent) collapse to cell 0; points on the upper
    face clamp into the last cell.
    """
    bits = _check_bits(bits)
    coords = np.asarray(coords, dtype=np.float64)
    lo = coords.min(axis=0)
    extent = coords.max(axis=0) - lo
    n_cells = 1 << bits
    cells = np.zeros(coords.shape, dtype=np.int64)
    live = extent > 0
    if np.any(live):
        scaled = (coords[:, live] - lo[live]) / extent[live] * n_cells
        cells[:, live] = np.clip(np.floor(scaled).astype(np.int64), 0, n_cells - 1)
    return cells.astype(np.uint64)


@dataclass(frozen=True)
class Serialization:
    """A curve ordering of one cloud: perm gathers points into curve order."""

    perm: np.ndarray
    inv_perm: np.ndarray
    variant: CurveVariant
    bits: int
    codes: np.ndarray  # curve index per point, original order

    def __post_init__(self):
        n = len(self.perm)
        if sorted(self.perm.tolist()) != list(range(n)):
            raise ValueError("perm is not a permutation of 0..n-1")
        if not np.array_equal(self.inv_perm[self.perm], np.arange(n)):
            raise ValueError("inv_perm is not the inverse of perm")


def serialize(pc: PointCloud, variant: CurveVariant, bits: int = 10) -> Serialization:
    """Order a cloud along a curve variant.

    Quantizes to the per-cloud bounding-box grid, encodes each cell, and
    stable-sorts by index so voxel ties keep original point order.
    """
    cells = quantize_to_grid(pc.coords, bits)
    codes = curve_encode(cells, bits, variant)
    perm = np.argsort(codes, kind="stable").astype(np.int64)
    inv_perm = np.empty_like(perm)
    inv_perm[perm] = np.arange(len(perm))
    return Serialization(perm=perm, inv_perm=inv_perm, variant=variant, bits=bits, codes=codes)


def identity_serialization(n: int, bits: int = 10) -> Serialization:
    """File-order serialization, useful as a no-curve control."""
    idx = np.arange(n, dtype=np.int64)
    return Serialization(
        perm=idx,
        inv_perm=idx.copy(),
        variant=CurveVariant(),
        bits=bits,
        codes=np.zeros(n, dtype=np.uint64),
    )


def random_serialization(n: int, rng: np.random.Generator, bits: int = 10) -> Serialization:
    """Uniform random permutation, the no-curve ablation control."""
    perm = rng.permutation(n).astype(np.int64)
    inv_perm = np.empty_like(perm)
    inv_perm[perm] = np.arange(n)
    return Serialization(
        perm=perm,
        inv_perm=inv_perm,
        variant=CurveVariant(),
        bits=bits,
        codes=np.zeros(n, dtype=np.uint64),
    )


def mean_neighbor_distance(coords: np.ndarray, perm: np.ndarray) -> float:
    """Mean Euclidean distance between consecutive points in serialized order.

    The locality statistic: lower means the curve keeps spatial neighbors
    adjacent in the sequence.
    """
    ordered = np.asarray(coords, dtype=np.float64)[perm]
    if len(ordered) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(ordered, axis=0), axis=1).mean())


PLAN_MODES = ("shuffle", "sequential", "fixed")


@dataclass(frozen=True)
class ShufflePlan:
    """Per-block curve-variant assignments plus the recipe that made them."""

    assignments: tuple[CurveVariant, ...]
    seed: int
    mode: str

    def __post_init__(self):
        if self.mode not in PLAN_MODES:
            raise ValueError(f"mode must be one of {PLAN_MODES}, got {self.mode!r}")
        if len(self.assignments) < 1:
            raise ValueError("plan must cover at least one block")


def make_shuffle_plan(
    num_blocks: int,
    seed: int = 0,
    mode: str = "shuffle",
    variants: tuple[CurveVariant, ...] = HILBERT_VARIANTS,
) -> ShufflePlan:
    """Assign a curve variant to each block.

    shuffle: i.i.d. uniform draws over ``variants`` (seeded). sequential:
    cycle ``variants`` in order. fixed: every block gets ``variants[0]``.
    """
    if num_blocks < 1:
        raise ValueError(f"num_blocks must be >= 1, got {num_blocks}")
    if mode not in PLAN_MODES:
        raise ValueError(f"mode must be one of {PLAN_MODES}, got {mode!r}")
    if not variants:
        raise ValueError("variant pool must be nonempty")
    if mode == "shuffle":
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(variants), size=num_blocks)
        assignments = tuple(variants[int(i)] for i in picks)
    elif mode == "sequential":
        assignments = tuple(variants[i % len(variants)] for i in range(num_blocks))
    else:
        assignments = (variants[0],) * num_blocks
    return ShufflePlan(assignments=assignments, seed=seed, mode=mode)
