from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .optim import ParamStore
from .tensor import Tensor


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: ParamStore,
    step: float = 1e-5,
    tolerance: float = 1e-6,
    floor: float = 1e-6,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps named parameter tensors to a scalar tensor. The relative error of
    one entry is ``|ad - fd| / max(|ad|, |fd|, floor)``; ``floor`` keeps
    entries whose true gradient is ~0 from dividing finite-difference noise by
    nothing.
    """
    if params.dtype != np.float64:
        raise TypeError("grad_check requires double precision parameters")
    tensors = params.tensors()
    loss = f(tensors)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"loss is not finite: {loss.data}")
    loss.backward()

    report = GradCheckReport({}, tolerance)
    base = {k: p.copy() for k, p in params.params.items()}

    def value(name: str, flat_idx: int, delta: float) -> float:
        arr = base[name].copy()
        arr.reshape(-1)[flat_idx] += delta
        probe = {k: Tensor(arr if k == name else v) for k, v in base.items()}
        return float(f(probe).data)

    for name in names or list(params.params):
        ad = tensors[name].grad
        if ad is None:
            ad = np.zeros_like(base[name])
        if not np.isfinite(ad).all():
            report.max_rel_error[name] = float("inf")
            report.failures.append(name)
            continue
        worst = 0.0
        flat_ad = ad.reshape(-1)
        for i in range(flat_ad.size):
            fd = (value(name, i, step) - value(name, i, -step)) / (2.0 * step)
            a = float(flat_ad[i])
            err = abs(a - fd) / max(abs(a), abs(fd), floor)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
        if not worst < tolerance:
            report.failures.append(name)
    return report
