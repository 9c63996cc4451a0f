"""Sequence-mixing blocks over curve-ordered point sequences.

A block gathers points into the order given by a space-filling-curve
serialization, mixes them with two parallel branches (a bidirectional
multi-head selective scan for global reach, a short 1D convolution for
local neighborhoods), fuses the branches through one projection, and
scatters the result back to the original point order.  The full block
wraps that mixer and a feed-forward layer in pre-norm residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, astensor
from .ops import (
    add,
    conv1d,
    depthwise_conv1d,
    gather_rows,
    layer_norm,
    linear,
    silu,
)
from .pointio import PointCloud
from .spacefill import Serialization
from .ssm import HeadConfig, SSMParams, bidirectional, init_head_params, mhs6_forward

CONV_KINDS = ("depthwise", "traditional")


@dataclass(frozen=True)
class BlockConfig:
    model_dim: int
    state_dim: int
    num_heads: int
    conv_kernel: int = 7
    ffn_ratio: int = 4
    conv_kind: str = "depthwise"
    # Ablation switches: drop the reverse scan direction or the local conv
    # branch.  Both on is the full mixer.
    bidirectional: bool = True
    use_conv: bool = True

    def __post_init__(self):
        if self.model_dim < 1 or self.state_dim < 1 or self.num_heads < 1:
            raise ValueError("model_dim, state_dim, num_heads must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"num_heads {self.num_heads} must divide model_dim {self.model_dim}"
            )
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd >= 1, got {self.conv_kernel}")
        if self.ffn_ratio < 1:
            raise ValueError(f"ffn_ratio must be >= 1, got {self.ffn_ratio}")
        if self.conv_kind not in CONV_KINDS:
            raise ValueError(f"conv_kind must be one of {CONV_KINDS}, got {self.conv_kind!r}")

    @property
    def head_config(self) -> HeadConfig:
        return HeadConfig(self.num_heads, self.model_dim, self.state_dim)


@dataclass
class BlockState:
    """All learnable tensors of one block."""

    config: BlockConfig
    norm1_scale: Tensor
    norm1_bias: Tensor
    norm2_scale: Tensor
    norm2_bias: Tensor
    fwd_heads: list[SSMParams]
    bwd_heads: list[SSMParams]  # empty when the block is forward-only
    conv_kernel: Tensor | None  # None when the conv branch is disabled
    out_w: Tensor
    out_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named_tensors(self, prefix: str = ""):
        for name in ("norm1_scale", "norm1_bias", "norm2_scale", "norm2_bias"):
            yield f"{prefix}{name}", getattr(self, name)
        for i, head in enumerate(self.fwd_heads):
            yield from head.named_tensors(f"{prefix}fwd{i}.")
        for i, head in enumerate(self.bwd_heads):
            yield from head.named_tensors(f"{prefix}bwd{i}.")
        if self.conv_kernel is not None:
            yield f"{prefix}conv_kernel", self.conv_kernel
        for name in ("out_w", "out_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            yield f"{prefix}{name}", getattr(self, name)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_block(cfg: BlockConfig, rng: np.random.Generator) -> BlockState:
    d, k, r = cfg.model_dim, cfg.conv_kernel, cfg.ffn_ratio
    if not cfg.use_conv:
        conv = None
    elif cfg.conv_kind == "depthwise":
        conv = _uniform(rng, (k, d), k)
    else:
        conv = _uniform(rng, (k, d, d), k * d)
    return BlockState(
        config=cfg,
        norm1_scale=Tensor(np.ones(d), requires_grad=True),
        norm1_bias=Tensor(np.zeros(d), requires_grad=True),
        norm2_scale=Tensor(np.ones(d), requires_grad=True),
        norm2_bias=Tensor(np.zeros(d), requires_grad=True),
        fwd_heads=init_head_params(cfg.head_config, rng),
        bwd_heads=init_head_params(cfg.head_config, rng) if cfg.bidirectional else [],
        conv_kernel=conv,
        out_w=_uniform(rng, (d, d), d),
        out_b=Tensor(np.zeros(d), requires_grad=True),
        ffn_w1=_uniform(rng, (d, r * d), d),
        ffn_b1=Tensor(np.zeros(r * d), requires_grad=True),
        ffn_w2=_uniform(rng, (r * d, d), r * d),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
    )


def curve_mixer(
    x,
    state: BlockState,
    serialization: Serialization,
    chunk: int | None = None,
    threads: int = 1,
    mode: str = "euler",
) -> Tensor:
    """Mix a point sequence along its curve order, then restore input order.

    The global branch is a bidirectional multi-head selective scan; the
    local branch is a short 1D convolution over the same curve-ordered
    sequence.  The branches are summed and passed through one projection,
    so zeroing either branch's parameters leaves exactly the other's
    contribution.
    """
    x = astensor(x)
    if serialization.perm.shape[0] != x.shape[0]:
        raise ValueError(
            f"serialization covers {serialization.perm.shape[0]} points, input has {x.shape[0]}"
        )
    xs = gather_rows(x, serialization.perm)
    if state.config.bidirectional:
        y = bidirectional(
            xs,
            state.fwd_heads,
            state.bwd_heads,
            cfg=state.config.head_config,
            chunk=chunk,
            threads=threads,
            mode=mode,
        )
    else:
        y = mhs6_forward(
            xs, state.config.head_config, state.fwd_heads, chunk=chunk, threads=threads, mode=mode
        )
    if state.conv_kernel is not None:
        if state.config.conv_kind == "depthwise":
            y_local = depthwise_conv1d(xs, state.conv_kernel)
        else:
            y_local = conv1d(xs, state.conv_kernel)
        y = add(y, y_local)
    fused = linear(y, state.out_w, state.out_b)
    return gather_rows(fused, serialization.inv_perm)


def ffn(x, state: BlockState) -> Tensor:
    h = silu(linear(x, state.ffn_w1, state.ffn_b1))
    return linear(h, state.ffn_w2, state.ffn_b2)


def residual_block(
    x,
    state: BlockState,
    serialization: Serialization,
    chunk: int | None = None,
    threads: int = 1,
    mode: str = "euler",
) -> Tensor:
    """Pre-norm residual block: mixer sublayer then feed-forward sublayer."""
    x = astensor(x)
    mixed = curve_mixer(
        layer_norm(x, state.norm1_scale, state.norm1_bias),
        state,
        serialization,
        chunk=chunk,
        threads=threads,
        mode=mode,
    )
    h = add(x, mixed)
    return add(h, ffn(layer_norm(h, state.norm2_scale, state.norm2_bias), state))


@dataclass
class EmbedParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_tensors(self, prefix: str = ""):
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}{name}", getattr(self, name)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def init_embed(in_dim: int, model_dim: int, rng: np.random.Generator) -> EmbedParams:
    return EmbedParams(
        w1=_uniform(rng, (in_dim, model_dim), in_dim),
        b1=Tensor(np.zeros(model_dim), requires_grad=True),
        w2=_uniform(rng, (model_dim, model_dim), model_dim),
        b2=Tensor(np.zeros(model_dim), requires_grad=True),
    )


def embed(pc, params: EmbedParams) -> Tensor:
    """Per-point MLP lifting (coords, optional features) to model width."""
    if isinstance(pc, PointCloud):
        if pc.features is not None:
            inp = np.concatenate([pc.coords, pc.features], axis=1)
        else:
            inp = pc.coords
    else:
        inp = np.asarray(pc, dtype=np.float64)
    x = Tensor(inp)
    if x.shape[1] != params.w1.shape[0]:
        raise ValueError(
            f"embedding expects {params.w1.shape[0]} input channels, got {x.shape[1]}"
        )
    return linear(silu(linear(x, params.w1, params.b1)), params.w2, params.b2)
