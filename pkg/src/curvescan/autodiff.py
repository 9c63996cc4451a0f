"""Reverse-mode differentiation over eager numpy arrays.

A Tensor wraps a float64 ndarray plus, when it was produced by a primitive,
references to its parents and a vector-Jacobian-product closure.  The
backward pass walks tensors in reverse topological order, accumulating
cotangents additively across fan-out, and deposits gradients on leaf
tensors created with ``requires_grad=True``.

There is no graph compilation and no tape object to manage: the graph IS
the web of parent references, garbage-collected with the tensors.  One
training step builds one graph and consumes it; tensors are immutable once
written (by convention; nothing copies defensively).

Debug aid: set ``CURVESCAN_NAN_CHECK=1`` (or use :func:`nan_checks`) to
raise on the first non-finite value any primitive produces, naming the op.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True
_NAN_CHECK = os.environ.get("CURVESCAN_NAN_CHECK", "") not in ("", "0")


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def nan_checks(enabled: bool = True):
    """Toggle per-op non-finite checks inside the block."""
    global _NAN_CHECK
    prev = _NAN_CHECK
    _NAN_CHECK = enabled
    try:
        yield
    finally:
        _NAN_CHECK = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense float64 array, optionally recorded on the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, gradient=None) -> None:
        """Accumulate dself/dleaf into ``.grad`` of every requires_grad leaf."""
        if gradient is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without an explicit cotangent needs a scalar, "
                    f"got shape {self.shape}"
                )
            gradient = np.ones_like(self.data)
        _run_backward(self, np.asarray(gradient, dtype=np.float64), want=None)

    def __repr__(self) -> str:
        tag = f", op={self._op!r}" if self._op != "leaf" else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic operators are attached by the ops module at import time to
    # keep the primitive definitions (and their backward rules) in one place.


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(op: str, data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Record one primitive application.

    ``vjp(g)`` must return one cotangent array (or None) per parent, in
    parent order.  Recording is skipped when grads are globally disabled or
    no parent needs them, so inference builds no graph.
    """
    if _NAN_CHECK and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Children-before-parents postorder, iterative (graphs can be deep)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(root: Tensor, seed: np.ndarray, want: set[int] | None) -> dict[int, np.ndarray]:
    """Reverse sweep from root.

    want=None: accumulate into .grad of requires_grad leaves.
    want=set of ids: collect cotangents of exactly those tensors instead.
    """
    if seed.shape != root.data.shape:
        raise ValueError(f"cotangent shape {seed.shape} != tensor shape {root.data.shape}")
    cotangents: dict[int, np.ndarray] = {id(root): seed}
    collected: dict[int, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = cotangents.pop(id(node), None)
        if g is None:
            continue
        if want is not None and id(node) in want:
            collected[id(node)] = g
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            if _NAN_CHECK:
                for pg in parent_grads:
                    if pg is not None and not np.all(np.isfinite(pg)):
                        raise FloatingPointError(
                            f"non-finite gradient produced by backward of op '{node._op}'"
                        )
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = cotangents.get(id(parent))
                cotangents[id(parent)] = pg if acc is None else acc + pg
        elif want is None and node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
    return collected


def grad(loss: Tensor, wrt) -> dict[Tensor, Tensor]:
    """d(loss)/d(t) for each tensor in ``wrt``; loss must be scalar.

    Tensors unreachable from the loss get zero gradients (documented, not
    an error).  Leaf ``.grad`` fields are not touched.
    """
    if loss.data.size != 1:
        raise ValueError(f"grad() needs a scalar loss, got shape {loss.shape}")
    wrt = list(wrt)
    want = {id(t) for t in wrt}
    collected = _run_backward(loss, np.ones_like(loss.data), want=want)
    out: dict[Tensor, Tensor] = {}
    for t in wrt:
        g = collected.get(id(t))
        out[t] = Tensor(g if g is not None else np.zeros_like(t.data))
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g
