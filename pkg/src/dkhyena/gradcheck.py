"""Central finite-difference verification of analytic gradients.

The checker treats the model as a black-box scalar function of its parameter
tensors: the analytic gradient comes from one recorded backward pass, the
numeric one from central differences (f(θ+h) - f(θ-h)) / 2h applied to every
scalar parameter in turn. The reported relative error for one scalar is

    |analytic - numeric| / max(1e-8, |analytic| + |numeric|)

and a check passes iff the maximum over all scalars is <= tol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor, backward


@dataclass
class GradCheckReport:
    tol: float
    h: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]


def finite_difference_check(f: Callable[[], Tensor],
                            params: Sequence[Tensor],
                            h: float = 1e-5,
                            tol: float = 1e-5,
                            names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor. The analytic pass runs once inside a Graph; the numeric passes
    evaluate f without a graph, perturbing one scalar at a time.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    for p in params:
        p.zero_grad()
    with Graph():
        loss = f()
        backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    report = GradCheckReport(tol=tol, h=h)
    for p, a, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            f_plus = f().item()
            flat[i] = keep - h
            f_minus = f().item()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * h)
            a_i = a.reshape(-1)[i]
            rel = abs(a_i - numeric) / max(1e-8, abs(a_i) + abs(numeric))
            if rel > worst:
                worst = rel
        report.per_param[name] = worst
    return report
