"""Differentiable primitives: forward numpy compute plus backward rules.

Every function here takes/returns :class:`~curvescan.autodiff.Tensor` and
registers a vector-Jacobian closure via ``make_node``.  Integer index
arrays (permutations, neighbor lists, segment ids, class labels) are plain
ndarrays: selection is treated as a constant of the step, so no gradients
flow into them.

Conventions: float64 everywhere; convolutions zero-pad to "same" length and
require odd kernel width; layer_norm normalizes the last axis with
eps=1e-5.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, astensor, make_node, unbroadcast


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data + b.data

    def vjp(g):
        return unbroadcast(g, a.data.shape), unbroadcast(g, b.data.shape)

    return make_node("add", data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data - b.data

    def vjp(g):
        return unbroadcast(g, a.data.shape), unbroadcast(-g, b.data.shape)

    return make_node("sub", data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data * b.data

    def vjp(g):
        return unbroadcast(g * b.data, a.data.shape), unbroadcast(g * a.data, b.data.shape)

    return make_node("mul", data, (a, b), vjp)


def neg(a) -> Tensor:
    a = astensor(a)
    return make_node("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = astensor(a)
    data = np.exp(a.data)
    return make_node("exp", data, (a,), lambda g: (g * data,))


def reciprocal(a) -> Tensor:
    a = astensor(a)
    data = 1.0 / a.data
    return make_node("reciprocal", data, (a,), lambda g: (-g * data * data,))


def softplus(a) -> Tensor:
    """log(1 + e^x), computed as x + log1p(e^-|x|) for large |x| stability."""
    a = astensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        return (g * _sigmoid(x),)

    return make_node("softplus", data, (a,), vjp)


def silu(a) -> Tensor:
    a = astensor(a)
    s = _sigmoid(a.data)
    data = a.data * s

    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return make_node("silu", data, (a,), vjp)


# ------------------------------------------------------------------- shapes


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    data = a.data.reshape(shape)
    return make_node("reshape", data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Tensor:
    a = astensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)
    return make_node("transpose", data, (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(astensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise ValueError(f"concat axis {axis} out of range for ndim {nd}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_node("concat", data, tensors, vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = astensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"narrow axis {axis} out of range for ndim {a.ndim}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return make_node("narrow", data, (a,), vjp)


def split(a, sections, axis: int = 0) -> tuple[Tensor, ...]:
    """Slice into consecutive pieces; int = that many equal parts."""
    a = astensor(a)
    n = a.data.shape[axis]
    if isinstance(sections, int):
        if n % sections != 0:
            raise ValueError(f"cannot split axis of size {n} into {sections} equal parts")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise ValueError(f"split sizes {sizes} do not sum to axis size {n}")
    out, start = [], 0
    for s in sizes:
        out.append(narrow(a, axis, start, s))
        start += s
    return tuple(out)


def flip(a, axis: int = 0) -> Tensor:
    a = astensor(a)
    data = np.flip(a.data, axis=axis).copy()
    return make_node("flip", data, (a,), lambda g: (np.flip(g, axis=axis),))


# ---------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        da = np.matmul(g, np.swapaxes(b.data, -1, -2))
        db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(da, a.data.shape), unbroadcast(db, b.data.shape)

    return make_node("matmul", data, (a, b), vjp)


def linear(x, W, b=None) -> Tensor:
    """x @ W + b over the last axis of x; W is (in, out), b is (out,)."""
    x, W = astensor(x), astensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.shape} vs W {W.shape}")
    data = x.data @ W.data
    if b is None:
        def vjp2(g):
            g2 = g.reshape(-1, W.shape[1])
            x2 = x.data.reshape(-1, W.shape[0])
            return g @ W.data.T, x2.T @ g2

        return make_node("linear", data, (x, W), vjp2)
    b = astensor(b)
    if b.shape != (W.shape[1],):
        raise ValueError(f"linear bias shape {b.shape} != ({W.shape[1]},)")
    data = data + b.data

    def vjp3(g):
        g2 = g.reshape(-1, W.shape[1])
        x2 = x.data.reshape(-1, W.shape[0])
        return g @ W.data.T, x2.T @ g2, g2.sum(axis=0)

    return make_node("linear", data, (x, W, b), vjp3)


def pointwise_conv1d(x, W) -> Tensor:
    """Kernel-size-1 convolution: an (in, out) channel mix at every step."""
    x, W = astensor(x), astensor(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ValueError(f"pointwise_conv1d shape mismatch: x {x.shape} vs W {W.shape}")
    data = x.data @ W.data

    def vjp(g):
        return g @ W.data.T, x.data.T @ g

    return make_node("pointwise_conv1d", data, (x, W), vjp)


_EINSUM_CACHE: dict[str, tuple[str, str, str]] = {}


def _parse_einsum2(subscripts: str) -> tuple[str, str, str]:
    cached = _EINSUM_CACHE.get(subscripts)
    if cached is not None:
        return cached
    if "->" not in subscripts or "..." in subscripts:
        raise ValueError(f"einsum2 needs an explicit '->' spec without ellipsis: {subscripts!r}")
    lhs, out_s = subscripts.replace(" ", "").split("->")
    parts = lhs.split(",")
    if len(parts) != 2:
        raise ValueError(f"einsum2 takes exactly two operands, got {subscripts!r}")
    a_s, b_s = parts
    for s in (a_s, b_s):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index within one operand unsupported: {subscripts!r}")
        # Backward transposes the spec, so every input index must be
        # recoverable from the output and the other operand.
        if not set(s) <= set(out_s) | set(a_s if s is b_s else b_s):
            raise ValueError(f"operand index not in output or other operand: {subscripts!r}")
    if not set(out_s) <= set(a_s) | set(b_s):
        raise ValueError(f"output index missing from operands: {subscripts!r}")
    _EINSUM_CACHE[subscripts] = (a_s, b_s, out_s)
    return a_s, b_s, out_s


def einsum2(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum with a generic transposed-spec backward."""
    a, b = astensor(a), astensor(b)
    a_s, b_s, out_s = _parse_einsum2(subscripts)
    data = np.einsum(subscripts, a.data, b.data)

    def vjp(g):
        da = np.einsum(f"{out_s},{b_s}->{a_s}", g, b.data)
        db = np.einsum(f"{a_s},{out_s}->{b_s}", a.data, g)
        return da, db

    return make_node("einsum2", data, (a, b), vjp)


# ------------------------------------------------------- norm / activations


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"layer_norm scale shapes {gamma.shape}/{beta.shape} != ({d},) for x {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = unbroadcast(g * xhat, gamma.data.shape)
        dbeta = unbroadcast(g, beta.data.shape)
        return dx, dgamma, dbeta

    return make_node("layer_norm", data, (x, gamma, beta), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = astensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node("softmax", s, (x,), vjp)


def cross_entropy(logits, label) -> Tensor:
    """Mean negative log-likelihood; logits (C,) or (B, C), integer labels."""
    logits = astensor(logits)
    was_vector = logits.ndim == 1
    z = logits.data.reshape(1, -1) if was_vector else logits.data
    if z.ndim != 2:
        raise ValueError(f"cross_entropy expects (C,) or (B, C) logits, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    bsz, ncls = z.shape
    if labels.shape != (bsz,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= ncls):
        raise ValueError(f"label out of range [0, {ncls})")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    nll = lse - z[np.arange(bsz), labels]
    data = np.asarray(nll.mean())

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(bsz), labels] -= 1.0
        dz = (float(g) / bsz) * p
        return (dz.reshape(logits.data.shape),)

    return make_node("cross_entropy", data, (logits,), vjp)


# ------------------------------------------------------- gather / reduce


def gather_rows(x, index) -> Tensor:
    """Select rows x[index]; backward scatter-adds, so repeats accumulate."""
    x = astensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(f"gather_rows index out of range [0, {x.shape[0]})")
    data = x.data[idx]

    def vjp(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return make_node("gather_rows", data, (x,), vjp)


def mean_pool(x, axis: int = 0) -> Tensor:
    x = astensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"mean_pool axis {axis} out of range for ndim {x.ndim}")
    n = x.shape[axis]
    data = x.data.mean(axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape) / n,)

    return make_node("mean_pool", data, (x,), vjp)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = astensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return make_node("reduce_sum", data, (x,), vjp)


def reduce_mean(x) -> Tensor:
    x = astensor(x)
    data = np.asarray(x.data.mean())

    def vjp(g):
        return (np.full_like(x.data, float(g) / x.data.size),)

    return make_node("reduce_mean", data, (x,), vjp)


def segment_mean(x, segment_ids, num_segments: int) -> Tensor:
    """Per-segment mean of rows; every segment in range must be nonempty."""
    x = astensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise ValueError(f"segment_ids shape {seg.shape} != ({x.shape[0]},)")
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError(f"segment id out of range [0, {num_segments})")
    if np.any(counts == 0):
        raise ValueError("segment_mean requires every segment to be nonempty")
    sums = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(sums, seg, x.data)
    data = sums / counts.reshape((-1,) + (1,) * (x.ndim - 1))

    def vjp(g):
        return (g[seg] / counts[seg].reshape((-1,) + (1,) * (x.ndim - 1)),)

    return make_node("segment_mean", data, (x,), vjp)


def knn_interp(src_feats, neighbor_idx, weights) -> Tensor:
    """dst[j] = sum_l weights[j,l] * src[neighbor_idx[j,l]] (weights fixed)."""
    src = astensor(src_feats)
    idx = np.asarray(neighbor_idx, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if idx.ndim != 2 or w.shape != idx.shape:
        raise ValueError(f"neighbor_idx {idx.shape} and weights {w.shape} must match (m, k)")
    if idx.size and (idx.min() < 0 or idx.max() >= src.shape[0]):
        raise ValueError(f"neighbor index out of range [0, {src.shape[0]})")
    data = (src.data[idx] * w[..., None]).sum(axis=1)

    def vjp(g):
        contrib = w[..., None] * g[:, None, :]
        dsrc = np.zeros_like(src.data)
        np.add.at(dsrc, idx.reshape(-1), contrib.reshape(-1, src.shape[1]))
        return (dsrc,)

    return make_node("knn_interp", data, (src,), vjp)


# ----------------------------------------------------------- convolutions


def _check_conv(x, k: int):
    if x.ndim != 2:
        raise ValueError(f"conv input must be (L, D), got {x.shape}")
    if k % 2 != 1:
        raise ValueError(f"conv kernel width must be odd, got {k}")


def depthwise_conv1d(x, kernel) -> Tensor:
    """Per-channel 1D convolution, zero-padded to same length.

    kernel is (k, D): tap j scales x shifted by j - k//2 in channel d.
    A delta kernel (1 at the center tap) is the identity map.
    """
    x, kernel = astensor(x), astensor(kernel)
    k = kernel.shape[0]
    _check_conv(x, k)
    if kernel.ndim != 2 or kernel.shape[1] != x.shape[1]:
        raise ValueError(f"depthwise kernel {kernel.shape} incompatible with x {x.shape}")
    L, pad = x.shape[0], k // 2
    xp = np.zeros((L + k - 1, x.shape[1]))
    xp[pad : pad + L] = x.data
    data = np.zeros_like(x.data)
    for j in range(k):
        data += xp[j : j + L] * kernel.data[j]

    def vjp(g):
        dk = np.empty_like(kernel.data)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dk[j] = (xp[j : j + L] * g).sum(axis=0)
            dxp[j : j + L] += g * kernel.data[j]
        return dxp[pad : pad + L], dk

    return make_node("depthwise_conv1d", data, (x, kernel), vjp)


def conv1d(x, kernel) -> Tensor:
    """Full (channel-mixing) 1D convolution, kernel (k, D_in, D_out)."""
    x, kernel = astensor(x), astensor(kernel)
    if kernel.ndim != 3:
        raise ValueError(f"conv1d kernel must be (k, D_in, D_out), got {kernel.shape}")
    k = kernel.shape[0]
    _check_conv(x, k)
    if kernel.shape[1] != x.shape[1]:
        raise ValueError(f"conv1d kernel {kernel.shape} incompatible with x {x.shape}")
    L, pad = x.shape[0], k // 2
    xp = np.zeros((L + k - 1, x.shape[1]))
    xp[pad : pad + L] = x.data
    data = np.zeros((L, kernel.shape[2]))
    for j in range(k):
        data += xp[j : j + L] @ kernel.data[j]

    def vjp(g):
        dk = np.empty_like(kernel.data)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dk[j] = xp[j : j + L].T @ g
            dxp[j : j + L] += g @ kernel.data[j].T
        return dxp[pad : pad + L], dk

    return make_node("conv1d", data, (x, kernel), vjp)


# ------------------------------------------------------ operator plumbing

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
