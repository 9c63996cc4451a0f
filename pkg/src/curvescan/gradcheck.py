"""Finite-difference verification of backward rules.

``check_gradients`` compares the tape's analytic gradients against central
differences, elementwise, and reports the worst relative error per input.
Non-scalar outputs are projected onto a fixed random cotangent so one
scalar loss exercises the whole Jacobian.  Inputs should stay small: the
probe loop is two forward evaluations per input element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, grad, nan_checks, no_grad
from .ops import mul, reduce_sum

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckReport:
    name: str
    tol: float
    eps: float
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_input.values()) if self.per_input else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.3e}" for k, v in self.per_input.items())
        return f"[{status}] {self.name}: max rel err {self.max_rel_err:.3e} ({worst})"


DEFAULT_DENOM_FLOOR = 1e-8


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = DEFAULT_DENOM_FLOOR) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(
    f,
    inputs,
    name: str = "f",
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    denom_floor: float = DEFAULT_DENOM_FLOOR,
) -> GradCheckReport:
    """Verify d(f)/d(input) for every element of every input.

    ``inputs`` is a dict name -> Tensor (f is called with keywords) or a
    sequence of Tensors (f is called positionally).  All inputs are marked
    requires_grad.  Per-op NaN checks are enabled throughout, so a
    non-finite intermediate raises naming the offending op.

    ``denom_floor`` bounds the relative-error denominator from below.  The
    central difference carries roundoff noise of roughly u*|f|/eps (u =
    machine epsilon), so gradients much smaller than that are beneath the
    probe's resolution; checks over thousands of parameters should raise
    the floor to about eps so sub-resolution elements compare by absolute
    error instead of blowing up a meaningless ratio.
    """
    if isinstance(inputs, dict):
        named = dict(inputs)
        call = lambda: f(**named)
    else:
        named = {f"arg{i}": t for i, t in enumerate(inputs)}
        args = list(inputs)
        call = lambda: f(*args)
    for t in named.values():
        if not isinstance(t, Tensor):
            raise TypeError("check_gradients inputs must be Tensors")
        t.requires_grad = True

    rng = np.random.default_rng(seed)
    cotangent: np.ndarray | None = None

    def scalar_loss() -> Tensor:
        nonlocal cotangent
        out = call()
        if out.size == 1:
            return out
        if cotangent is None:
            cotangent = rng.standard_normal(out.shape)
        return reduce_sum(mul(out, Tensor(cotangent)))

    report = GradCheckReport(name=name, tol=tol, eps=eps)
    with nan_checks(True):
        loss = scalar_loss()
        analytic = grad(loss, list(named.values()))
        for label, t in named.items():
            a = analytic[t].data
            fd = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            fd_flat = fd.reshape(-1)
            with no_grad():
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    hi = float(scalar_loss().data)
                    flat[i] = orig - eps
                    lo = float(scalar_loss().data)
                    flat[i] = orig
                    fd_flat[i] = (hi - lo) / (2.0 * eps)
            report.per_input[label] = (
                float(_rel_err(a, fd, denom_floor).max()) if flat.size else 0.0
            )
    return report


def random_tensors(shapes: dict[str, tuple[int, ...]], seed: int = 0, scale: float = 1.0):
    """Seeded standard-normal Tensors keyed by name, for check inputs."""
    rng = np.random.default_rng(seed)
    return {k: Tensor(scale * rng.standard_normal(s), requires_grad=True) for k, s in shapes.items()}
