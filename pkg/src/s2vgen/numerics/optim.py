from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class ParamStore:
    """Named parameters plus AdamW moment accumulators."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(p, requires_grad=requires_grad, name=k) for k, p in self.params.items()}

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: p.astype(dtype) for k, p in self.params.items()})

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: p.copy() for k, p in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def adamw_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> ParamStore:
    """One AdamW update in place (bias-corrected moments, decoupled decay)."""
    missing = sorted(set(store.params) - set(grads))
    if missing:
        raise KeyError(f"no gradient for parameters: {', '.join(missing)}")
    store.step += 1
    bc1 = 1.0 - beta1**store.step
    bc2 = 1.0 - beta2**store.step
    for name, p in store.params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return store


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total
