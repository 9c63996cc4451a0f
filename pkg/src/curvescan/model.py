"""Full network: embedding, staged encoder with downsampling, optional
decoder with upsampling, and task heads.

Geometry (curve serializations, sampling indices, interpolation weights)
depends only on the input coordinates and the config, so it is computed
once per cloud and cached in a PreparedCloud.  Each block consumes one
curve-variant assignment from a per-forward plan; training redraws the
plan every step, evaluation uses a fixed seeded plan so logits are
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .blocks import (
    BlockConfig,
    BlockState,
    EmbedParams,
    embed,
    init_block,
    init_embed,
    residual_block,
)
from .ops import concat, gather_rows, knn_interp, linear, mean_pool, segment_mean, silu
from .pointio import PointCloud
from .resample import Resampling, fps, grid_pool, interp_weights
from .spacefill import (
    CurveVariant,
    Serialization,
    make_shuffle_plan,
    random_serialization,
    serialize,
)

TASKS = ("recognition", "segmentation")
SERIALIZATION_MODES = ("shuffle", "sequential", "fixed", "random")


@dataclass(frozen=True)
class StageConfig:
    """One encoder stage: its blocks and the transition that enters it.

    ``down`` is None for the first stage; later stages use "fps:K" (keep
    every Kth point by farthest point sampling, m = ceil(n/K)) or
    "grid:S" (voxel mean pooling with edge S).
    """

    num_blocks: int
    model_dim: int
    num_heads: int
    down: str | None = None

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.down is not None:
            self.down_kind  # validate eagerly

    @property
    def down_kind(self) -> tuple[str, float] | None:
        if self.down is None:
            return None
        kind, _, arg = self.down.partition(":")
        if kind == "fps":
            factor = int(arg)
            if factor < 1:
                raise ValueError(f"fps factor must be >= 1, got {self.down!r}")
            return ("fps", float(factor))
        if kind == "grid":
            size = float(arg)
            if size <= 0:
                raise ValueError(f"grid size must be > 0, got {self.down!r}")
            return ("grid", size)
        raise ValueError(f"down must be 'fps:K' or 'grid:S', got {self.down!r}")


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    task: str = "recognition"
    num_classes: int = 4
    in_channels: int = 0
    state_dim: int = 8
    conv_kernel: int = 7
    conv_kind: str = "depthwise"
    ffn_ratio: int = 4
    bits: int = 10
    serialization: str = "shuffle"
    shuffle_seed: int = 0
    bidirectional: bool = True
    use_conv: bool = True

    def __post_init__(self):
        if not self.stages:
            raise ValueError("at least one stage required")
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.in_channels < 0:
            raise ValueError("in_channels must be >= 0")
        if self.serialization not in SERIALIZATION_MODES:
            raise ValueError(
                f"serialization must be one of {SERIALIZATION_MODES}, got {self.serialization!r}"
            )
        if self.stages[0].down is not None:
            raise ValueError("first stage cannot have a down transition")
        for s in self.stages[1:]:
            if s.down is None:
                raise ValueError("every stage after the first needs a down transition")
        s0 = self.stages[0]
        for s in self.stages:
            # Head count rides the width: h_i / D_i constant across stages.
            if s.num_heads * s0.model_dim != s0.num_heads * s.model_dim:
                raise ValueError(
                    "num_heads must scale proportionally with model_dim across stages: "
                    f"stage 0 has {s0.num_heads}/{s0.model_dim}, "
                    f"offending stage has {s.num_heads}/{s.model_dim}"
                )
        for s in self.stages:
            self.block_config(s)  # surface bad width/head/kernel combos at build time

    def block_config(self, stage: StageConfig) -> BlockConfig:
        return BlockConfig(
            model_dim=stage.model_dim,
            state_dim=self.state_dim,
            num_heads=stage.num_heads,
            conv_kernel=self.conv_kernel,
            ffn_ratio=self.ffn_ratio,
            conv_kind=self.conv_kind,
            bidirectional=self.bidirectional,
            use_conv=self.use_conv,
        )

    @property
    def total_blocks(self) -> int:
        n = sum(s.num_blocks for s in self.stages)
        if self.task == "segmentation":
            n += sum(s.num_blocks for s in self.stages[:-1])
        return n


# --- flat key=value config text ---------------------------------------------

_BOOL_KEYS = ("bidirectional", "use_conv")
_INT_KEYS = ("num_classes", "in_channels", "state_dim", "conv_kernel", "ffn_ratio", "bits", "shuffle_seed")
_STR_KEYS = ("task", "conv_kind", "serialization")


def _format_stage(s: StageConfig) -> str:
    parts = [f"blocks={s.num_blocks}", f"dim={s.model_dim}", f"heads={s.num_heads}"]
    if s.down is not None:
        parts.append(f"down={s.down}")
    return " ".join(parts)


def _parse_stage(text: str) -> StageConfig:
    kv = {}
    for item in text.split():
        key, _, val = item.partition("=")
        if not val:
            raise ValueError(f"bad stage item {item!r}, expected key=value")
        kv[key] = val
    for req in ("blocks", "dim", "heads"):
        if req not in kv:
            raise ValueError(f"stage spec missing {req!r} in {text!r}")
    stage = StageConfig(
        num_blocks=int(kv.pop("blocks")),
        model_dim=int(kv.pop("dim")),
        num_heads=int(kv.pop("heads")),
        down=kv.pop("down", None),
    )
    if kv:
        raise ValueError(f"unknown stage keys {sorted(kv)} in {text!r}")
    return stage


def format_model_config(cfg: ModelConfig) -> str:
    lines = [f"stages = {' ; '.join(_format_stage(s) for s in cfg.stages)}"]
    for key in _STR_KEYS + _INT_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    for key in _BOOL_KEYS:
        lines.append(f"{key} = {str(getattr(cfg, key)).lower()}")
    return "\n".join(lines) + "\n"


def parse_model_config(text: str) -> ModelConfig:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        kv[key.strip()] = val.strip()
    if "stages" not in kv:
        raise ValueError("config missing required key 'stages'")
    fields: dict = {
        "stages": tuple(_parse_stage(s.strip()) for s in kv.pop("stages").split(";"))
    }
    for key in _STR_KEYS:
        if key in kv:
            fields[key] = kv.pop(key)
    for key in _INT_KEYS:
        if key in kv:
            fields[key] = int(kv.pop(key))
    for key in _BOOL_KEYS:
        if key in kv:
            val = kv.pop(key).lower()
            if val not in ("true", "false"):
                raise ValueError(f"{key} must be true or false, got {val!r}")
            fields[key] = val == "true"
    if kv:
        raise ValueError(f"unknown config keys: {sorted(kv)}")
    return ModelConfig(**fields)


PRESETS = {
    # Small enough for finite-difference checks to finish quickly.
    "tiny": ModelConfig(
        stages=(StageConfig(num_blocks=1, model_dim=12, num_heads=3),),
        num_classes=4,
        state_dim=4,
        conv_kernel=3,
        ffn_ratio=2,
        bits=6,
    ),
    # Default classification model for the synthetic four-shape task.
    "toy": ModelConfig(
        stages=(
            StageConfig(num_blocks=2, model_dim=48, num_heads=6),
            StageConfig(num_blocks=2, model_dim=48, num_heads=6, down="fps:2"),
        ),
        num_classes=4,
        state_dim=8,
        conv_kernel=7,
        bits=10,
    ),
    # Per-point labeling variant exercising the decoder path.
    "toy-seg": ModelConfig(
        stages=(
            StageConfig(num_blocks=1, model_dim=24, num_heads=3),
            StageConfig(num_blocks=1, model_dim=24, num_heads=3, down="grid:0.4"),
        ),
        task="segmentation",
        num_classes=4,
        state_dim=8,
        conv_kernel=7,
        bits=8,
    ),
}


def preset_config(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, have {sorted(PRESETS)}")
    return PRESETS[name]


# --- weights -----------------------------------------------------------------


@dataclass
class HeadMLP:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_tensors(self, prefix: str = ""):
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}{name}", getattr(self, name)

    def __call__(self, x) -> Tensor:
        return linear(silu(linear(x, self.w1, self.b1)), self.w2, self.b2)


@dataclass
class StageWeights:
    blocks: list[BlockState]
    down_w: Tensor | None = None  # projection entering this stage (None for stage 0)
    down_b: Tensor | None = None

    def named_tensors(self, prefix: str = ""):
        if self.down_w is not None:
            yield f"{prefix}down_w", self.down_w
            yield f"{prefix}down_b", self.down_b
        for i, blk in enumerate(self.blocks):
            yield from blk.named_tensors(f"{prefix}block{i}.")


@dataclass
class DecoderStageWeights:
    up_w: Tensor  # projection of concat(upsampled, skip) back to the stage width
    up_b: Tensor
    blocks: list[BlockState]

    def named_tensors(self, prefix: str = ""):
        yield f"{prefix}up_w", self.up_w
        yield f"{prefix}up_b", self.up_b
        for i, blk in enumerate(self.blocks):
            yield from blk.named_tensors(f"{prefix}block{i}.")


@dataclass
class ModelWeights:
    config: ModelConfig
    embedding: EmbedParams
    encoder: list[StageWeights]
    decoder: list[DecoderStageWeights]  # deep-to-shallow; empty for recognition
    head: HeadMLP

    def named_tensors(self):
        yield from self.embedding.named_tensors("embed.")
        for i, sw in enumerate(self.encoder):
            yield from sw.named_tensors(f"enc{i}.")
        for i, dw in enumerate(self.decoder):
            yield from dw.named_tensors(f"dec{i}.")
        yield from self.head.named_tensors("head.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def build_model(cfg: ModelConfig, rng: np.random.Generator | None = None) -> ModelWeights:
    rng = rng if rng is not None else np.random.default_rng(0)
    embedding = init_embed(3 + cfg.in_channels, cfg.stages[0].model_dim, rng)
    encoder: list[StageWeights] = []
    for i, stage in enumerate(cfg.stages):
        blocks = [init_block(cfg.block_config(stage), rng) for _ in range(stage.num_blocks)]
        if i == 0:
            encoder.append(StageWeights(blocks=blocks))
        else:
            prev = cfg.stages[i - 1].model_dim
            encoder.append(
                StageWeights(
                    blocks=blocks,
                    down_w=_uniform(rng, (prev, stage.model_dim), prev),
                    down_b=_zeros(stage.model_dim),
                )
            )
    decoder: list[DecoderStageWeights] = []
    if cfg.task == "segmentation":
        for i in range(len(cfg.stages) - 2, -1, -1):
            stage = cfg.stages[i]
            deep = cfg.stages[i + 1].model_dim
            cat = deep + stage.model_dim
            decoder.append(
                DecoderStageWeights(
                    up_w=_uniform(rng, (cat, stage.model_dim), cat),
                    up_b=_zeros(stage.model_dim),
                    blocks=[
                        init_block(cfg.block_config(stage), rng)
                        for _ in range(stage.num_blocks)
                    ],
                )
            )
        head_dim = cfg.stages[0].model_dim
    else:
        head_dim = cfg.stages[-1].model_dim
    head = HeadMLP(
        w1=_uniform(rng, (head_dim, head_dim), head_dim),
        b1=_zeros(head_dim),
        w2=_uniform(rng, (head_dim, cfg.num_classes), head_dim),
        b2=_zeros(cfg.num_classes),
    )
    return ModelWeights(cfg, embedding, encoder, decoder, head)


# --- per-cloud geometry cache --------------------------------------------------


@dataclass
class PreparedCloud:
    """Everything about one cloud that does not depend on weights."""

    pc: PointCloud
    embed_input: np.ndarray
    stage_coords: list[np.ndarray]
    transitions: list[Resampling]
    up_interp: list[tuple[np.ndarray, np.ndarray] | None]  # per transition, fps only
    bits: int
    _serializations: list[dict[CurveVariant, Serialization]] = field(default_factory=list)

    def serialization(self, stage: int, variant: CurveVariant) -> Serialization:
        cache = self._serializations[stage]
        if variant not in cache:
            cache[variant] = serialize(
                PointCloud(coords=self.stage_coords[stage]), variant, bits=self.bits
            )
        return cache[variant]

    @property
    def label(self):
        return self.pc.class_id if self.pc.labels is None else self.pc.labels


def prepare_cloud(pc: PointCloud, cfg: ModelConfig) -> PreparedCloud:
    if cfg.in_channels:
        if pc.features is None or pc.features.shape[1] != cfg.in_channels:
            have = 0 if pc.features is None else pc.features.shape[1]
            raise ValueError(f"model expects {cfg.in_channels} feature channels, cloud has {have}")
        embed_input = np.concatenate([pc.coords, pc.features], axis=1)
    else:
        embed_input = pc.coords
    stage_coords = [pc.coords]
    transitions: list[Resampling] = []
    up_interp: list[tuple[np.ndarray, np.ndarray] | None] = []
    for stage in cfg.stages[1:]:
        coords = stage_coords[-1]
        kind, arg = stage.down_kind
        if kind == "fps":
            m = max(1, math.ceil(coords.shape[0] / arg))
            sel = fps(coords, m)
            transitions.append(Resampling(selected=sel))
            stage_coords.append(coords[sel])
        else:
            pooled_coords, _, assignment = grid_pool(coords, np.zeros((coords.shape[0], 1)), arg)
            transitions.append(Resampling(assignment=assignment, grid_size=arg))
            stage_coords.append(pooled_coords)
    if cfg.task == "segmentation":
        for i, tr in enumerate(transitions):
            if tr.selected is not None:
                up_interp.append(interp_weights(stage_coords[i + 1], stage_coords[i], k=3))
            else:
                up_interp.append(None)  # grid unpooling reuses the assignment
    return PreparedCloud(
        pc=pc,
        embed_input=embed_input,
        stage_coords=stage_coords,
        transitions=transitions,
        up_interp=up_interp,
        bits=cfg.bits,
        _serializations=[{} for _ in stage_coords],
    )


# --- per-forward curve plans ---------------------------------------------------

# A plan entry is either a CurveVariant or ("random", seed): the latter makes
# the block use a seeded random permutation instead of a curve order (the
# no-curve ablation control).


def draw_plan(cfg: ModelConfig, rng: np.random.Generator | None = None) -> list:
    """Curve-variant assignment for each block of one forward pass.

    With an rng (training) the shuffle/random modes resample; without one
    (evaluation) everything derives from cfg.shuffle_seed, so plans and
    therefore logits are reproducible bit-for-bit.
    """
    n = cfg.total_blocks
    if cfg.serialization == "random":
        if rng is None:
            rng = np.random.default_rng(cfg.shuffle_seed + 0x5EED)
        return [("random", int(rng.integers(0, 2**63))) for _ in range(n)]
    if cfg.serialization == "shuffle" and rng is not None:
        seed = int(rng.integers(0, 2**31))
    else:
        seed = cfg.shuffle_seed
    plan = make_shuffle_plan(n, seed=seed, mode=cfg.serialization)
    return list(plan.assignments)


def _block_serialization(prep: PreparedCloud, stage: int, entry) -> Serialization:
    if isinstance(entry, CurveVariant):
        return prep.serialization(stage, entry)
    _, seed = entry
    n = prep.stage_coords[stage].shape[0]
    return random_serialization(n, np.random.default_rng(seed), bits=prep.bits)


# --- forward -------------------------------------------------------------------


def forward(
    prep: PreparedCloud | PointCloud,
    weights: ModelWeights,
    plan: list | None = None,
    chunk: int | None = 64,
    threads: int = 1,
) -> Tensor:
    """Logits for one cloud: (num_classes,) for recognition, (n, num_classes)
    for segmentation."""
    cfg = weights.config
    if isinstance(prep, PointCloud):
        prep = prepare_cloud(prep, cfg)
    if plan is None:
        plan = draw_plan(cfg)
    if len(plan) != cfg.total_blocks:
        raise ValueError(f"plan has {len(plan)} entries, model has {cfg.total_blocks} blocks")
    x = embed(prep.embed_input, weights.embedding)
    entry = iter(plan)
    skips: list[Tensor] = []
    for si, stage in enumerate(cfg.stages):
        sw = weights.encoder[si]
        if si > 0:
            tr = prep.transitions[si - 1]
            if tr.selected is not None:
                x = gather_rows(x, tr.selected)
            else:
                x = segment_mean(x, tr.assignment, prep.stage_coords[si].shape[0])
            x = linear(x, sw.down_w, sw.down_b)
        for blk in sw.blocks:
            ser = _block_serialization(prep, si, next(entry))
            x = residual_block(x, blk, ser, chunk=chunk, threads=threads)
        skips.append(x)
    if cfg.task == "recognition":
        return weights.head(mean_pool(x, axis=0))
    for di, dw in enumerate(weights.decoder):
        si = len(cfg.stages) - 2 - di  # stage whose resolution we return to
        tr = prep.transitions[si]
        if tr.selected is not None:
            idx, w = prep.up_interp[si]
            up = knn_interp(x, idx, w)
        else:
            up = gather_rows(x, tr.assignment)
        x = linear(concat([up, skips[si]], axis=1), dw.up_w, dw.up_b)
        for blk in dw.blocks:
            ser = _block_serialization(prep, si, next(entry))
            x = residual_block(x, blk, ser, chunk=chunk, threads=threads)
    return weights.head(x)


# --- weight serialization ------------------------------------------------------


def save_weights(path, weights: ModelWeights) -> None:
    arrays = {name: t.data for name, t in weights.named_tensors()}
    arrays["__config__"] = np.array(format_model_config(weights.config))
    np.savez(path, **arrays)


def load_weights(path) -> ModelWeights:
    with np.load(path, allow_pickle=False) as z:
        cfg = parse_model_config(str(z["__config__"]))
        weights = build_model(cfg, np.random.default_rng(0))
        stored = {k: z[k] for k in z.files if k != "__config__"}
    for name, t in weights.named_tensors():
        if name not in stored:
            raise ValueError(f"weight file missing tensor {name!r}")
        arr = stored.pop(name)
        if arr.shape != t.data.shape:
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {t.data.shape}")
        t.data[...] = arr
    if stored:
        raise ValueError(f"weight file has unused tensors: {sorted(stored)}")
    return weights
