"""Flow-matching objective, Euler sampler and the training loop.

Convention: ``x_t = (1 - t) x0 + t eps`` so t=1 is pure noise and t=0 is data;
the regression target is the constant path velocity ``eps - x0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .dit import Conditioning, DiTConfig, PromptTokens, VideoTokens, forward, image_patches, unpatchify, video_patches
from .numerics import ParamStore, Tensor, adamw_step, clip_grad_norm, stream

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, index: int | None = None, step: int | None = None):
        super().__init__(message)
        self.index = index
        self.step = step


class NonFiniteStateError(FloatingPointError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


def _same_shape(a, b, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shapes differ, {np.shape(a)} vs {np.shape(b)}")


def interpolate(x0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    _same_shape(x0, eps, "interpolate")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return (1.0 - t) * x0 + t * eps


def target_velocity(x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    _same_shape(x0, eps, "target_velocity")
    return eps - x0


def to_model_space(pixels_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (np.asarray(pixels_u8, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def to_pixels(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class TrainExample:
    """Model-space view of one record: clean video patches plus fixed conditioning."""

    key: str
    x0: VideoTokens
    refs: list[VideoTokens]
    prompt: PromptTokens
    cond: Conditioning

    @classmethod
    def build(cls, key: str, video_u8: np.ndarray, ref_images_u8: Sequence[np.ndarray], prompt_ids, config: DiTConfig):
        x0 = video_patches(to_model_space(video_u8, config.dtype), config)
        refs = [image_patches(to_model_space(im, config.dtype), config) for im in ref_images_u8]
        prompt = PromptTokens(list(prompt_ids))
        return cls(key, x0, refs, prompt, Conditioning(refs, prompt, x0.grid, config))

    @classmethod
    def from_record(cls, record, config: DiTConfig) -> "TrainExample":
        return cls.build(record.sample_id, record.video, [r.image for r in record.refs], record.prompt_ids, config)


def draw(seed: int, step: int, key: str, shape, dtype=np.float64) -> tuple[float, np.ndarray]:
    """Timestep and noise for one (step, sample) pair, independent of batch composition."""
    rng = stream(seed, "fm", step, key)
    t = float(rng.random())
    eps = rng.standard_normal(shape).astype(dtype)
    return t, eps


VelocityModel = Callable[[TrainExample, np.ndarray, float, dict], Tensor]


def dit_velocity(config: DiTConfig) -> VelocityModel:
    def model(ex: TrainExample, x_t: np.ndarray, t: float, P: dict) -> Tensor:
        noisy = VideoTokens(*ex.x0.grid, x_t)
        return forward(noisy, ex.refs, ex.prompt, t, P, config, ex.cond)

    return model


def fm_loss(
    params: ParamStore,
    config: DiTConfig,
    batch: Sequence[TrainExample],
    seed: int,
    step: int = 0,
    model: VelocityModel | None = None,
    with_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over the batch of the per-sample MSE between predicted and target velocity.

    The error is averaged over video tokens only; reference tokens are never
    targets. Gradients are accumulated sample by sample.
    """
    if not batch:
        raise ValueError("fm_loss needs a non-empty batch")
    model = model or dit_velocity(config)
    dtype = params.dtype
    grads = {k: np.zeros_like(p) for k, p in params.params.items()} if with_grads else {}
    total = 0.0
    for i, ex in enumerate(batch):
        x0 = ex.x0.tokens.astype(dtype)
        t, eps = draw(seed, step, ex.key, x0.shape, dtype)
        x_t = interpolate(x0, eps, t).astype(dtype)
        target = target_velocity(x0, eps).astype(dtype)
        P = params.tensors(requires_grad=with_grads)
        pred = model(ex, x_t, t, P)
        loss = nx.mean(nx.square(pred - target))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite loss {value} for batch index {i} ({ex.key}) at step {step}", i, step)
        total += value
        if with_grads:
            loss.backward(np.asarray(1.0 / len(batch), dtype=dtype))
            for k, tensor in P.items():
                if tensor.grad is not None:
                    grads[k] += tensor.grad
    return total / len(batch), grads


# sampling


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 32
    seed: int = 0
    guidance_scale: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sampler steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be non-negative")


def initial_noise(shape, seed: int, dtype=np.float64) -> np.ndarray:
    return stream(seed, "sample", "z").standard_normal(shape).astype(dtype)


def euler_integrate(x: np.ndarray, velocity: Callable[[np.ndarray, float], np.ndarray], steps: int) -> np.ndarray:
    """Integrate dx/dt = v from t=1 down to t=0 with uniform explicit Euler steps."""
    dt = 1.0 / steps
    for i in range(steps):
        t = 1.0 - i * dt
        v = velocity(x, t)
        x = x - dt * v
        if not np.isfinite(x).all():
            raise NonFiniteStateError(f"non-finite sampler state after step {i}", i)
    return x


def sample(
    params: ParamStore,
    config: DiTConfig,
    refs: Sequence[np.ndarray],
    prompt: "PromptTokens | Sequence[int]",
    sampler: SamplerConfig,
    video_shape: tuple[int, int, int, int],
    velocity_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> np.ndarray:
    """Generate a video (frames x channels x H x W, model space) from reference images and a prompt.

    ``refs`` are model-space ``channels x h x w`` images. ``velocity_fn``
    replaces the network (used by oracle checks).
    """
    if len(refs) > config.max_refs:
        raise ValueError(f"{len(refs)} references exceed max_refs={config.max_refs}")
    if not isinstance(prompt, PromptTokens):
        prompt = PromptTokens(list(prompt))
    grid = video_patches(np.zeros(video_shape, dtype=config.dtype), config)
    x = initial_noise(grid.tokens.shape, sampler.seed, config.dtype)

    if velocity_fn is None:
        ref_tokens = [image_patches(np.asarray(r, dtype=config.dtype), config) for r in refs]
        cond = Conditioning(ref_tokens, prompt, grid.grid, config)
        uncond = Conditioning([], prompt, grid.grid, config) if sampler.guidance_scale > 0 else None

        def velocity_fn(x_t, t):
            noisy = VideoTokens(*grid.grid, x_t)
            v = forward(noisy, ref_tokens, prompt, t, params, config, cond).data
            if uncond is not None:
                v_free = forward(noisy, [], prompt, t, params, config, uncond).data
                v = v + sampler.guidance_scale * (v - v_free)
            return v

    x = euler_integrate(x, velocity_fn, sampler.steps)
    return unpatchify(VideoTokens(*grid.grid, x), (config.patch_t, config.patch_s), config.channels)


# training


@dataclass(frozen=True)
class Phase:
    name: str
    steps: int
    lr: float


@dataclass(frozen=True)
class TrainConfig:
    phases: tuple[Phase, ...] = (Phase("pretrain", 1500, 1e-3), Phase("sft", 500, 5e-4))
    batch_size: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    warmup: int = 50
    decay: str = "none"
    min_lr_ratio: float = 0.0

    def __post_init__(self):
        if self.decay not in ("none", "cosine"):
            raise ValueError(f"decay must be 'none' or 'cosine', got {self.decay!r}")

    @property
    def total_steps(self) -> int:
        return sum(p.steps for p in self.phases)

    def lr_at(self, step: int, phase: Phase) -> float:
        """Phase learning rate times linear warmup and, optionally, a cosine decay over the whole run."""
        lr = phase.lr
        if self.warmup:
            lr *= min(1.0, (step + 1) / self.warmup)
        if self.decay == "cosine":
            frac = step / max(self.total_steps - 1, 1)
            lr *= self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac))
        return lr


@dataclass
class TrainResult:
    params: ParamStore
    curve: list[tuple[int, float]] = field(default_factory=list)
    failed_step: int | None = None


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    if batch_size >= n:
        return list(range(n))
    return sorted(int(i) for i in stream(seed, "batch", step).choice(n, batch_size, replace=False))


def train(
    params: ParamStore,
    config: DiTConfig,
    examples: Sequence[TrainExample],
    cfg: TrainConfig,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Run the phase schedule with AdamW. Stops at the first non-finite loss."""
    result = TrainResult(params)
    step = 0
    for phase in cfg.phases:
        for _ in range(phase.steps):
            batch = [examples[i] for i in batch_indices(len(examples), cfg.batch_size, cfg.seed, step)]
            try:
                loss, grads = fm_loss(params, config, batch, cfg.seed, step)
            except NonFiniteLossError as exc:
                log.error("%s", exc)
                result.failed_step = step
                raise
            clip_grad_norm(grads, cfg.clip_norm)
            adamw_step(params, grads, cfg.lr_at(step, phase), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
            result.curve.append((step, loss))
            if on_step:
                on_step(step, loss)
            step += 1
    return result
