"""Shared finite-difference suite: primitive sweep plus composite checks.

Used by the unit tests, the acceptance gradient suite, and the gradcheck
CLI subcommand, so all three run the same coverage: every primitive with a
backward rule appears once with tiny inputs (the FD probe is two forwards
per element), followed by the scan layers, a full block, and the smallest
full model.
"""

import numpy as np

from . import ops
from .autodiff import Tensor
from .gradcheck import GradCheckReport, check_gradients
from .scan import linear_recurrence


def _t(rng, *shape, lo=None, hi=None):
    if lo is not None:
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def primitive_cases():
    """(name, fn, inputs) triples covering every differentiable primitive."""
    rng = np.random.default_rng(20240)
    cases = [
        ("add_broadcast", lambda a, b: ops.add(a, b),
         {"a": _t(rng, 3, 4), "b": _t(rng, 4)}),
        ("sub", lambda a, b: ops.sub(a, b),
         {"a": _t(rng, 2, 3), "b": _t(rng, 2, 3)}),
        ("mul_broadcast", lambda a, b: ops.mul(a, b),
         {"a": _t(rng, 3, 4), "b": _t(rng, 3, 1)}),
        ("neg", lambda a: ops.neg(a), {"a": _t(rng, 5)}),
        ("exp", lambda a: ops.exp(a), {"a": _t(rng, 4)}),
        ("reciprocal", lambda a: ops.reciprocal(a), {"a": _t(rng, 4, lo=0.5, hi=2.0)}),
        ("softplus", lambda a: ops.softplus(a), {"a": _t(rng, 6)}),
        ("silu", lambda a: ops.silu(a), {"a": _t(rng, 6)}),
        ("reshape", lambda a: ops.reshape(a, (6,)), {"a": _t(rng, 2, 3)}),
        ("transpose", lambda a: ops.transpose(a, (1, 2, 0)), {"a": _t(rng, 2, 3, 4)}),
        ("concat", lambda a, b: ops.concat([a, b], axis=1),
         {"a": _t(rng, 2, 3), "b": _t(rng, 2, 2)}),
        ("narrow", lambda a: ops.narrow(a, 0, 1, 2), {"a": _t(rng, 4, 3)}),
        ("split", lambda a: ops.split(a, 2, axis=1)[1], {"a": _t(rng, 3, 4)}),
        ("flip", lambda a: ops.flip(a, 0), {"a": _t(rng, 4, 2)}),
        ("matmul", lambda a, b: ops.matmul(a, b),
         {"a": _t(rng, 3, 4), "b": _t(rng, 4, 2)}),
        ("matmul_batched", lambda a, b: ops.matmul(a, b),
         {"a": _t(rng, 2, 3, 4), "b": _t(rng, 4, 2)}),
        ("linear", lambda x, w, b: ops.linear(x, w, b),
         {"x": _t(rng, 5, 3), "w": _t(rng, 3, 4), "b": _t(rng, 4)}),
        ("linear_nobias", lambda x, w: ops.linear(x, w),
         {"x": _t(rng, 5, 3), "w": _t(rng, 3, 4)}),
        ("pointwise_conv1d", lambda x, w: ops.pointwise_conv1d(x, w),
         {"x": _t(rng, 5, 3), "w": _t(rng, 3, 4)}),
        ("einsum2_contract", lambda a, b: ops.einsum2("lhp,hpn->lhn", a, b),
         {"a": _t(rng, 3, 2, 3), "b": _t(rng, 2, 3, 4)}),
        ("einsum2_outer", lambda a, b: ops.einsum2("lc,ln->lcn", a, b),
         {"a": _t(rng, 3, 2), "b": _t(rng, 3, 4)}),
        ("layer_norm", lambda x, g, b: ops.layer_norm(x, g, b),
         {"x": _t(rng, 4, 5), "g": _t(rng, 5), "b": _t(rng, 5)}),
        ("softmax", lambda x: ops.softmax(x), {"x": _t(rng, 3, 5)}),
        ("cross_entropy", lambda x: ops.cross_entropy(x, np.array([1, 0, 2])),
         {"x": _t(rng, 3, 4)}),
        ("gather_rows_repeats", lambda x: ops.gather_rows(x, np.array([2, 0, 2, 1])),
         {"x": _t(rng, 3, 4)}),
        ("mean_pool", lambda x: ops.mean_pool(x, axis=0), {"x": _t(rng, 5, 3)}),
        ("reduce_sum", lambda x: ops.reduce_sum(x, axis=1), {"x": _t(rng, 3, 4)}),
        ("reduce_sum_all", lambda x: ops.reduce_sum(x), {"x": _t(rng, 3, 4)}),
        ("reduce_mean", lambda x: ops.reduce_mean(x), {"x": _t(rng, 3, 4)}),
        ("segment_mean", lambda x: ops.segment_mean(x, np.array([1, 0, 1, 0, 2]), 3),
         {"x": _t(rng, 5, 3)}),
        ("knn_interp",
         lambda s: ops.knn_interp(
             s, np.array([[0, 2], [1, 3]]), np.array([[0.3, 0.7], [0.5, 0.5]])),
         {"s": _t(rng, 4, 3)}),
        ("depthwise_conv1d", lambda x, k: ops.depthwise_conv1d(x, k),
         {"x": _t(rng, 6, 3), "k": _t(rng, 3, 3)}),
        ("conv1d", lambda x, k: ops.conv1d(x, k),
         {"x": _t(rng, 6, 3), "k": _t(rng, 3, 3, 4)}),
        ("linear_recurrence_seq", lambda a, b: linear_recurrence(a, b),
         {"a": _t(rng, 7, 2, 3, lo=0.05, hi=0.95), "b": _t(rng, 7, 2, 3)}),
        ("linear_recurrence_chunked", lambda a, b: linear_recurrence(a, b, chunk=3),
         {"a": _t(rng, 8, 2, 2, lo=0.05, hi=0.95), "b": _t(rng, 8, 2, 2)}),
    ]
    return cases


def composite_cases():
    """Scan layers and a full block, checked through all their parameters."""
    from .blocks import init_block, BlockConfig, residual_block
    from .spacefill import identity_serialization
    from .ssm import HeadConfig, init_head_params, init_ssm_params, mhs6_forward, s6_forward

    rng = np.random.default_rng(20241)
    cases = []

    p = init_ssm_params(3, 2, rng)
    x6 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    named = {name: t for name, t in p.named_tensors()}
    named["x"] = x6
    cases.append(("s6_forward", lambda **kw: s6_forward(x6, p), named))

    cfg = HeadConfig(num_heads=2, model_dim=6, state_dim=2)
    heads = init_head_params(cfg, rng)
    xm = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    named = {f"h{i}.{n}": t for i, h in enumerate(heads) for n, t in h.named_tensors()}
    named["x"] = xm
    cases.append(("mhs6_forward", lambda **kw: mhs6_forward(xm, cfg, heads), named))

    bcfg = BlockConfig(model_dim=4, state_dim=2, num_heads=2, conv_kernel=3, ffn_ratio=2)
    state = init_block(bcfg, rng)
    _widen_steps(dict(state.named_tensors()))
    xb = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    ser = identity_serialization(5)
    named = dict(state.named_tensors())
    named["x"] = xb
    cases.append(("block", lambda **kw: residual_block(xb, state, ser), named))
    return cases


def _widen_steps(named: dict) -> None:
    # Training init keeps scan step sizes small (dt around 1e-3..1e-1),
    # which makes their gradients smaller than the FD probe can resolve.
    # The check instance raises them to O(1); correctness is step-agnostic.
    for name, t in named.items():
        if name.endswith("delta_bias"):
            t.data[...] = t.data + 2.0


def model_case(n_points: int = 32):
    """FD check through every weight of the smallest full model."""
    from .model import build_model, forward, prepare_cloud, preset_config
    from .ops import cross_entropy
    from .pointio import SyntheticSpec, make_synthetic, normalize_unit_sphere

    cfg = preset_config("tiny")
    weights = build_model(cfg, np.random.default_rng(20242))
    named = dict(weights.named_tensors())
    _widen_steps(named)
    pc = normalize_unit_sphere(make_synthetic(SyntheticSpec("torus", n_points, 0.02, seed=5)))
    prep = prepare_cloud(pc, cfg)

    def f(**kw):
        return cross_entropy(forward(prep, weights, chunk=8), pc.class_id)

    return ("tiny_model", f, named)


def run_suite(include_model: bool = True, tol: float = 1e-4) -> list[GradCheckReport]:
    """All FD reports, in suite order; callers decide how to render them."""
    reports = [
        check_gradients(fn, inputs, name=name, tol=tol)
        for name, fn, inputs in primitive_cases() + composite_cases()
    ]
    if include_model:
        name, fn, inputs = model_case()
        # Probing ~1700 parameters of one scalar loss: some elements have
        # sub-resolution sensitivity, so the denominator floor rises to eps
        # (absolute comparison below the FD noise floor).
        reports.append(check_gradients(fn, inputs, name=name, tol=tol, denom_floor=1e-5))
    return reports
