"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Parameter, Tensor


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between backward and central differences."""

    per_parameter: dict[str, float] = field(default_factory=dict)
    tolerance: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        lines = [f"  {name}: {err:.3e}" for name, err in self.per_parameter.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_error:.3e} "
                     f"(tolerance {self.tolerance:.0e}) -> {status}")
        return "\n".join(lines)


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(fn: Callable[[], Tensor], params: list[Parameter],
                      epsilon: float = 1e-6,
                      tolerance: float = 1e-5) -> GradCheckReport:
    """Compare backward() gradients of a scalar expression to central differences.

    ``fn`` must rebuild and return the scalar expression from the current
    parameter values on every call, and must be deterministic (eval mode or
    a fixed dropout mask); non-determinism is detected and rejected.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"finite_diff_check requires float64 parameters "
                            f"({p.name} is {p.data.dtype})")

    out = fn()
    if out.data.size != 1:
        raise ValueError("finite_diff_check: expression must reduce to a scalar")
    if not np.array_equal(out.data, fn().data):
        raise RuntimeError(
            "finite_diff_check: expression is non-deterministic; run in eval "
            "mode or fix the dropout mask")

    for p in params:
        p.zero_grad()
    out.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    def central_diff(flat, i, eps):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn().data)
        flat[i] = orig - eps
        f_minus = float(fn().data)
        flat[i] = orig
        return (f_plus - f_minus) / (2.0 * eps)

    # retry ladder: larger steps beat float64 roundoff on near-zero
    # gradients, smaller steps dodge ReLU kink crossings
    ladder = (epsilon, 10 * epsilon, 100 * epsilon, 1000 * epsilon,
              0.1 * epsilon)

    report = GradCheckReport(tolerance=tolerance)
    for p in params:
        worst = 0.0
        flat = p.data.reshape(-1)
        grad = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            err = _relative_error(grad[i], central_diff(flat, i, epsilon))
            if err >= tolerance:
                for eps in ladder[1:]:
                    err = min(err, _relative_error(grad[i],
                                                   central_diff(flat, i, eps)))
                    if err < tolerance:
                        break
            worst = max(worst, err)
        report.per_parameter[p.name] = worst
    return report
