"""Linear-recurrence scan kernels: sequential oracle and chunked parallel.

The recurrence is h_t = a_t * h_{t-1} + b_t with h_{-1} = 0, elementwise
over arbitrary trailing dimensions, associative under
(a1,b1) (x) (a2,b2) = (a1*a2, a2*b1 + b2).

The chunked kernel evaluates a fixed two-level reduction tree determined
only by (L, chunk): a within-chunk pass (vectorized across chunks, or
sharded over worker threads along the chunk axis), a sequential carry
chain across chunks, then a combine pass.  No step's arithmetic depends on
the worker count, so results are bit-identical for any ``threads``.  With
a single chunk the kernel degenerates to the sequential loop, bit-exactly.

``linear_recurrence`` wraps the kernel as a differentiable op: the
backward pass is the same recurrence run on the reversed, shifted
coefficients (the adjoint of a linear recurrence is a linear recurrence),
reusing the chunked kernel, at O(L * d * N) saved-state memory.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, astensor, make_node


def combine(p: tuple, q: tuple) -> tuple:
    """Associative composition of two recurrence elements (a, b)."""
    a1, b1 = p
    a2, b2 = q
    return a1 * a2, a2 * b1 + b2


def _scan_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(b)
    h = np.zeros(b.shape[1:])
    for t in range(b.shape[0]):
        h = a[t] * h + b[t]
        out[t] = h
    return out


def _local_pass(a, b, h_local, prefix, lo, hi):
    # Within-chunk scan plus cumulative coefficient, rows lo:hi of the
    # chunk axis; each row is independent so sharding cannot change values.
    chunk = a.shape[1]
    h = np.zeros_like(b[lo:hi, 0])
    p = np.ones_like(a[lo:hi, 0])
    for i in range(chunk):
        h = a[lo:hi, i] * h + b[lo:hi, i]
        p = p * a[lo:hi, i]
        h_local[lo:hi, i] = h
        prefix[lo:hi, i] = p


def scan_chunked(a: np.ndarray, b: np.ndarray, chunk: int | None = None, threads: int = 1) -> np.ndarray:
    """Evaluate the recurrence over axis 0 with the fixed (L, chunk) tree."""
    if a.shape != b.shape:
        raise ValueError(f"scan operands must share a shape: {a.shape} vs {b.shape}")
    L = a.shape[0]
    if L == 0:
        return b.copy()
    if chunk is None:
        chunk = L
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    if chunk >= L:
        return _scan_sequential(a, b)

    n_chunks = -(-L // chunk)
    rest = a.shape[1:]
    padded = n_chunks * chunk
    if padded != L:
        # Neutral padding (a=1, b=0) keeps the carried state unchanged.
        pad_a = np.ones((padded - L,) + rest)
        pad_b = np.zeros((padded - L,) + rest)
        a = np.concatenate([a, pad_a], axis=0)
        b = np.concatenate([b, pad_b], axis=0)
    ac = a.reshape((n_chunks, chunk) + rest)
    bc = b.reshape((n_chunks, chunk) + rest)

    h_local = np.empty_like(bc)
    prefix = np.empty_like(ac)
    if threads > 1 and n_chunks > 1:
        bounds = np.linspace(0, n_chunks, min(threads, n_chunks) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [
                pool.submit(_local_pass, ac, bc, h_local, prefix, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futs:
                f.result()
    else:
        _local_pass(ac, bc, h_local, prefix, 0, n_chunks)

    # Sequential carry chain over chunk boundaries.
    carries = np.empty((n_chunks,) + rest)
    carry = np.zeros(rest)
    for c in range(n_chunks):
        carries[c] = carry
        carry = prefix[c, -1] * carry + h_local[c, -1]

    out = h_local
    # Chunk 0 has a zero carry; skipping its combine keeps it bit-equal to
    # the sequential result (adding a signed zero could flip -0.0).
    out[1:] += prefix[1:] * carries[1:, None]
    return out.reshape((padded,) + rest)[:L]


def linear_recurrence(a, b, chunk: int | None = None, threads: int = 1) -> Tensor:
    """Differentiable h_t = a_t * h_{t-1} + b_t over axis 0, h_{-1} = 0."""
    a, b = astensor(a), astensor(b)
    if a.shape != b.shape:
        raise ValueError(f"linear_recurrence operands must share a shape: {a.shape} vs {b.shape}")
    h = scan_chunked(a.data, b.data, chunk=chunk, threads=threads)

    def vjp(g):
        L = g.shape[0]
        # Adjoint recurrence g_tot_t = g_t + a_{t+1} * g_tot_{t+1}, run as a
        # forward scan on reversed inputs with coefficients shifted by one.
        a_rev = np.concatenate([np.ones((1,) + a.shape[1:]), a.data[:0:-1]], axis=0)
        g_tot = scan_chunked(a_rev, g[::-1], chunk=chunk, threads=threads)[::-1]
        h_prev = np.concatenate([np.zeros((1,) + h.shape[1:]), h[:-1]], axis=0)
        return g_tot * h_prev, g_tot

    return make_node("linear_recurrence", h, (a, b), vjp)


@dataclass
class ScanParams:
    """Per-step recurrence inputs: decay a_bar, driven term bx_bar, readout c.

    a_bar and bx_bar are (L, d, N); c is (L, N).  The selective path always
    produces 0 < a_bar < 1, but the kernel itself accepts any reals (a_bar
    of zero is the valid memoryless case).
    """

    a_bar: np.ndarray
    bx_bar: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a_bar = np.asarray(self.a_bar, dtype=np.float64)
        self.bx_bar = np.asarray(self.bx_bar, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.a_bar.ndim != 3:
            raise ValueError(f"a_bar must be (L, d, N), got {self.a_bar.shape}")
        if self.a_bar.shape != self.bx_bar.shape:
            raise ValueError(
                f"a_bar {self.a_bar.shape} and bx_bar {self.bx_bar.shape} must match"
            )
        L, _, N = self.a_bar.shape
        if self.c.shape != (L, N):
            raise ValueError(f"c must be ({L}, {N}), got {self.c.shape}")


def selective_scan_seq(params: ScanParams) -> np.ndarray:
    """Sequential oracle: exact per-step recurrence plus readout."""
    h = _scan_sequential(params.a_bar, params.bx_bar)
    return np.einsum("lcn,ln->lc", h, params.c)


def selective_scan_par(params: ScanParams, chunk: int, threads: int = 1) -> np.ndarray:
    """Chunk-parallel evaluation of the same recurrence and readout."""
    h = scan_chunked(params.a_bar, params.bx_bar, chunk=chunk, threads=threads)
    return np.einsum("lcn,ln->lc", h, params.c)
