"""Toy trainer: AdamW on cross-entropy over synthetic shape classification,
plus the evaluation loop and the ablation harness.

Everything is deterministic for a fixed seed in single-threaded mode: the
data, the init, the batch order, the per-step curve plans, and therefore
the metric history, reproduce bit-for-bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import no_grad
from .model import (
    ModelConfig,
    ModelWeights,
    PreparedCloud,
    build_model,
    draw_plan,
    forward,
    prepare_cloud,
)
from .ops import cross_entropy
from .pointio import PointCloud, SHAPE_KINDS, SyntheticSpec, make_synthetic, normalize_unit_sphere

OPTIMIZERS = ("adamw",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    optimizer: str = "adamw"
    # Plumbing: early stop once test accuracy reaches target; scan execution.
    target_acc: float | None = None
    chunk: int | None = 64
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.target_acc is not None and not 0 < self.target_acc <= 1:
            raise ValueError("target_acc must be in (0, 1]")


class AdamW:
    """Adam with decoupled weight decay; decay skips vectors (biases, norm
    scales, per-channel SSM parameters), the usual convention."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    frac = min(step / max(total_steps, 1), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def make_dataset(
    num_clouds: int,
    points: int = 256,
    noise: float = 0.02,
    seed: int = 0,
) -> list[PointCloud]:
    """Synthetic 4-class set: shapes cycle so classes stay balanced."""
    rng = np.random.default_rng(seed)
    clouds = []
    for i in range(num_clouds):
        shape = SHAPE_KINDS[i % len(SHAPE_KINDS)]
        spec = SyntheticSpec(shape, points, noise, seed=int(rng.integers(0, 2**32)))
        clouds.append(normalize_unit_sphere(make_synthetic(spec)))
    return clouds


def _prepare_all(clouds, cfg: ModelConfig) -> list[PreparedCloud]:
    return [pc if isinstance(pc, PreparedCloud) else prepare_cloud(pc, cfg) for pc in clouds]


def evaluate(weights: ModelWeights, clouds, chunk: int | None = 64, threads: int = 1) -> float:
    """Fraction of clouds classified correctly under the fixed eval plan."""
    preps = _prepare_all(clouds, weights.config)
    plan = draw_plan(weights.config)
    hits = 0
    with no_grad():
        for prep in preps:
            logits = forward(prep, weights, plan=plan, chunk=chunk, threads=threads)
            hits += int(np.argmax(logits.data) == prep.pc.class_id)
    return hits / len(preps)


def snapshot_weights(weights: ModelWeights) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in weights.named_tensors()}


def restore_weights(weights: ModelWeights, snapshot: dict[str, np.ndarray]) -> None:
    for name, t in weights.named_tensors():
        t.data[...] = snapshot[name]


def train_toy(
    weights: ModelWeights,
    train_clouds,
    test_clouds,
    tcfg: TrainConfig,
) -> tuple[list[dict], dict[str, np.ndarray]]:
    """Train in place; returns (per-epoch history, best-test-accuracy snapshot).

    History records are {"epoch", "train_acc", "test_acc", "loss"}; train
    accuracy is tallied from the training-pass logits themselves.
    """
    cfg = weights.config
    train_preps = _prepare_all(train_clouds, cfg)
    test_preps = _prepare_all(test_clouds, cfg)
    opt = AdamW(weights.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    rng = np.random.default_rng(tcfg.seed)
    n = len(train_preps)
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    history: list[dict] = []
    best = snapshot_weights(weights)
    best_acc = -1.0
    step = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        hits = 0
        for lo in range(0, n, tcfg.batch_size):
            batch = order[lo : lo + tcfg.batch_size]
            opt.zero_grad()
            for i in batch:
                prep = train_preps[i]
                plan = draw_plan(cfg, rng)
                logits = forward(prep, weights, plan=plan, chunk=tcfg.chunk, threads=tcfg.threads)
                loss = cross_entropy(logits, prep.pc.class_id)
                val = loss.item()
                if not np.isfinite(val):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch} "
                        f"step {step} (lr={cosine_lr(tcfg.lr, step, total_steps):.3g})"
                    )
                loss.backward(np.asarray(1.0 / len(batch)))
                epoch_loss += val
                hits += int(np.argmax(logits.data) == prep.pc.class_id)
            opt.step(lr=cosine_lr(tcfg.lr, step, total_steps))
            step += 1
        test_acc = evaluate(weights, test_preps, chunk=tcfg.chunk, threads=tcfg.threads)
        record = {
            "epoch": epoch,
            "train_acc": hits / n,
            "test_acc": test_acc,
            "loss": epoch_loss / n,
        }
        history.append(record)
        if test_acc > best_acc:
            best_acc = test_acc
            best = snapshot_weights(weights)
        if tcfg.target_acc is not None and test_acc >= tcfg.target_acc:
            break
    return history, best


# --- ablation harness ----------------------------------------------------------


def default_ablation_cells() -> list[dict]:
    """One-axis-at-a-time grid mirroring the serialization, branch, and
    head-count comparisons; the base cell is shuffle + both branches + h=6."""
    return [
        {"name": "shuffle-hilbert", "overrides": {}},
        {"name": "sequential-hilbert", "overrides": {"serialization": "sequential"}},
        {"name": "no-curve", "overrides": {"serialization": "random"}},
        {"name": "bidi-only", "overrides": {"use_conv": False}},
        {"name": "neither", "overrides": {"bidirectional": False, "use_conv": False}},
        {"name": "heads-1", "overrides": {"num_heads": 1}},
        {"name": "heads-3", "overrides": {"num_heads": 3}},
        {"name": "heads-12", "overrides": {"num_heads": 12}},
    ]


def apply_cell(cfg: ModelConfig, overrides: dict) -> ModelConfig:
    o = dict(overrides)
    stages = cfg.stages
    if "num_heads" in o:
        h = o.pop("num_heads")
        stages = tuple(replace(s, num_heads=h) for s in stages)
    return replace(cfg, stages=stages, **o)


def ablate(
    base_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_clouds,
    test_clouds,
    cells: list[dict] | None = None,
    seeds=(0, 1, 2),
) -> list[dict]:
    """Run train_toy per (cell, seed); failures mark the row and the run
    continues.  Rows carry the best and final test accuracy per run."""
    cells = default_ablation_cells() if cells is None else cells
    rows: list[dict] = []
    for cell in cells:
        try:
            cfg = apply_cell(base_cfg, cell["overrides"])
        except Exception as e:  # bad cell: mark every seed, keep going
            for seed in seeds:
                rows.append(
                    {"cell": cell["name"], "seed": seed, "status": "failed", "error": str(e)}
                )
            continue
        for seed in seeds:
            t0 = time.time()
            try:
                weights = build_model(cfg, np.random.default_rng(seed))
                history, best = train_toy(
                    weights, train_clouds, test_clouds, replace(train_cfg, seed=seed)
                )
                rows.append(
                    {
                        "cell": cell["name"],
                        "seed": seed,
                        "status": "ok",
                        "best_test_acc": max(h["test_acc"] for h in history),
                        "final_test_acc": history[-1]["test_acc"],
                        "final_train_acc": history[-1]["train_acc"],
                        "epochs_run": len(history),
                        "seconds": round(time.time() - t0, 2),
                    }
                )
            except Exception as e:
                rows.append(
                    {"cell": cell["name"], "seed": seed, "status": "failed", "error": str(e)}
                )
    return rows


def summarize_ablation(rows: list[dict]) -> dict[str, float]:
    """Mean best test accuracy per cell over its successful seeds."""
    by_cell: dict[str, list[float]] = {}
    for row in rows:
        if row["status"] == "ok":
            by_cell.setdefault(row["cell"], []).append(row["best_test_acc"])
    return {cell: float(np.mean(accs)) for cell, accs in by_cell.items()}
