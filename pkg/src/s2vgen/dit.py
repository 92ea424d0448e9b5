"""A small diffusion transformer over patchified video plus reference-image tokens.

The self-attention sequence is ``[ref_1 tokens, ..., ref_n tokens, video tokens]``;
reference images share the video patch projection and are always clean.
Position enters only through the rotary encoding of queries and keys, text
enters through per-block cross-attention, and the timestep through adaptive
layer-norm modulation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numerics as nx
from .datasynth.vocab import VOCAB
from .numerics import ParamStore, Tensor
from .rope import RopeConfig, RopeVariant, SequenceGeometry, assemble_positions, rope_tables

DTYPES = {"single": np.float32, "double": np.float64}


@dataclass(frozen=True)
class DiTConfig:
    model_dim: int = 128
    depth: int = 4
    heads: int = 4
    head_dim: int = 32
    patch_t: int = 1
    patch_s: int = 4
    channels: int = 3
    text_vocab_size: int = len(VOCAB)
    text_dim: int = 64
    max_refs: int = 3
    mlp_ratio: int = 4
    rope_axis_split: tuple[int, int, int] | None = None
    rope_base: float = 10000.0
    variant: RopeVariant = RopeVariant.SHIFT_WH
    modulate_refs: bool = True
    per_image_t_zero: bool = False
    precondition: bool = True
    sigma_data: float = 0.5
    precision: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "variant", RopeVariant.parse(self.variant))
        if self.rope_axis_split is not None:
            object.__setattr__(self, "rope_axis_split", tuple(self.rope_axis_split))
        if self.model_dim != self.heads * self.head_dim:
            raise ValueError(f"model_dim {self.model_dim} != heads {self.heads} * head_dim {self.head_dim}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")
        for name in ("depth", "heads", "patch_t", "patch_s", "channels", "text_vocab_size", "text_dim", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_refs < 0:
            raise ValueError("max_refs must be non-negative")
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        self.rope  # validates the split

    @property
    def rope(self) -> RopeConfig:
        return RopeConfig(self.head_dim, self.rope_axis_split, self.rope_base)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_t * self.patch_s * self.patch_s

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    def with_(self, **changes) -> "DiTConfig":
        return replace(self, **changes)


@dataclass
class VideoTokens:
    """A token grid: ``tokens`` has one row per (t, h, w) cell in row-major order."""

    frames: int
    rows: int
    cols: int
    tokens: np.ndarray

    def __post_init__(self):
        if len(self.tokens) != self.frames * self.rows * self.cols:
            raise ValueError(
                f"{len(self.tokens)} tokens for a {self.frames}x{self.rows}x{self.cols} grid"
            )

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.frames, self.rows, self.cols


@dataclass
class PromptTokens:
    ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if not self.ids:
            raise ValueError("prompt must contain at least one token")

    def validate(self, vocab_size: int) -> None:
        bad = [i for i in self.ids if not 0 <= i < vocab_size]
        if bad:
            raise ValueError(f"prompt ids {bad} outside [0, {vocab_size})")


def patchify(pixels: np.ndarray, patch_size: tuple[int, int], proj: np.ndarray | None = None) -> VideoTokens:
    """Cut ``frames x channels x height x width`` pixels into non-overlapping patches.

    Each token is the patch flattened as (channel, dt, dy, dx), optionally
    multiplied by ``proj`` (patch_dim x model_dim).
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 4:
        raise ValueError(f"expected frames x channels x height x width, got {pixels.shape}")
    pt, ps = patch_size
    F, C, Hp, Wp = pixels.shape
    need = [(F, pt, "frames"), (Hp, ps, "height"), (Wp, ps, "width")]
    bad = [f"{name} {n} needs {(-n) % p} more to divide by {p}" for n, p, name in need if n % p]
    if bad:
        raise ValueError("indivisible extents: " + "; ".join(bad))
    T, H, W = F // pt, Hp // ps, Wp // ps
    x = pixels.reshape(T, pt, C, H, ps, W, ps).transpose(0, 3, 5, 2, 1, 4, 6)
    tokens = x.reshape(T * H * W, C * pt * ps * ps)
    if proj is not None:
        tokens = tokens @ proj
    return VideoTokens(T, H, W, tokens)


def unpatchify(tokens: VideoTokens, patch_size: tuple[int, int], channels: int) -> np.ndarray:
    """Inverse of :func:`patchify` (without projection)."""
    pt, ps = patch_size
    T, H, W = tokens.grid
    data = np.asarray(tokens.tokens)
    if data.shape != (T * H * W, channels * pt * ps * ps):
        raise ValueError(
            f"token array {data.shape} inconsistent with grid {T}x{H}x{W} and patch dim {channels * pt * ps * ps}"
        )
    x = data.reshape(T, H, W, channels, pt, ps, ps).transpose(0, 4, 3, 1, 5, 2, 6)
    return x.reshape(T * pt, channels, H * ps, W * ps)


def image_patches(image: np.ndarray, config: DiTConfig) -> VideoTokens:
    """Patchify a single ``channels x h x w`` reference image.

    The image is repeated over the temporal patch so it shares the video
    projection.
    """
    image = np.asarray(image)
    frames = np.repeat(image[None], config.patch_t, axis=0)
    return patchify(frames, (config.patch_t, config.patch_s))


def video_patches(pixels: np.ndarray, config: DiTConfig) -> VideoTokens:
    return patchify(pixels, (config.patch_t, config.patch_s))


# parameters


def param_shapes(config: DiTConfig) -> dict[str, tuple[int, ...]]:
    D, P, E = config.model_dim, config.patch_dim, config.text_dim
    M = config.mlp_ratio * D
    shapes = {
        "patch.w": (P, D),
        "patch.b": (D,),
        "time.w1": (D, D),
        "time.b1": (D,),
        "time.w2": (D, D),
        "time.b2": (D,),
        "text.table": (config.text_vocab_size, E),
    }
    for i in range(config.depth):
        p = f"blocks.{i}."
        shapes.update(
            {
                p + "mod.w": (D, 6 * D),
                p + "mod.b": (6 * D,),
                p + "attn.wqkv": (D, 3 * D),
                p + "attn.bqkv": (3 * D,),
                p + "attn.wo": (D, D),
                p + "attn.bo": (D,),
                p + "cross.wq": (D, D),
                p + "cross.wk": (E, D),
                p + "cross.wv": (E, D),
                p + "cross.wo": (D, D),
                p + "cross.bo": (D,),
                p + "mlp.w1": (D, M),
                p + "mlp.b1": (M,),
                p + "mlp.w2": (M, D),
                p + "mlp.b2": (D,),
            }
        )
    shapes.update({"final.mod.w": (D, 2 * D), "final.mod.b": (2 * D,), "final.w": (D, P), "final.b": (P,)})
    return shapes


_ZERO_INIT = ("attn.wo", "attn.bo", "cross.wo", "cross.bo", "final.w", "final.b")


def init_params(config: DiTConfig, seed: int) -> ParamStore:
    """Deterministic initialization; output projections start at zero."""
    params = {}
    for name, shape in param_shapes(config).items():
        rng = nx.stream(seed, "init", name)
        if name.endswith(_ZERO_INIT) or len(shape) == 1:
            arr = np.zeros(shape)
        elif name == "text.table":
            arr = rng.normal(0.0, 1.0, shape)
        elif name.endswith("mod.w"):
            arr = rng.normal(0.0, 0.02, shape)
        else:
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-limit, limit, shape)
        params[name] = arr.astype(config.dtype)
    return ParamStore(params)


# forward


def timestep_embedding(t: float, dim: int, dtype) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = 1000.0 * float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb[None, :].astype(dtype)


def _linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w
    return y + b if b is not None else y


def _heads(x: Tensor, n: int, heads: int, head_dim: int) -> Tensor:
    return x.reshape(n, heads, head_dim)


def _attend(q: Tensor, k: Tensor, v: Tensor, head_dim: int) -> Tensor:
    """q: (n, h, d), k/v: (m, h, d) -> (n, h*d)."""
    n, h, d = q.shape
    qh = q.transpose(1, 0, 2)
    kh = k.transpose(1, 2, 0)
    vh = v.transpose(1, 0, 2)
    att = nx.softmax((qh @ kh) * (1.0 / math.sqrt(head_dim)))
    return (att @ vh).transpose(1, 0, 2).reshape(n, h * d)


class Conditioning:
    """Per-sample quantities that do not depend on the noisy video."""

    def __init__(
        self,
        refs: Sequence[VideoTokens],
        prompt: PromptTokens,
        video_grid: tuple[int, int, int],
        config: DiTConfig,
        angle_scale: float = 1.0,
        positions: np.ndarray | None = None,
    ):
        if len(refs) > config.max_refs:
            raise ValueError(f"{len(refs)} references exceed max_refs={config.max_refs}")
        prompt.validate(config.text_vocab_size)
        for r in refs:
            if r.frames != 1:
                raise ValueError("reference images must patchify to a single frame")
        self.refs = list(refs)
        self.prompt = prompt
        self.geometry = SequenceGeometry(tuple(video_grid), tuple((r.rows, r.cols) for r in refs))
        if positions is None:
            positions = assemble_positions(self.geometry, config.variant, config.per_image_t_zero)
        self.positions = positions
        self.tables = rope_tables(positions, config.rope, angle_scale)
        self.ref_tokens = (
            np.concatenate([r.tokens for r in refs], axis=0).astype(config.dtype)
            if refs
            else np.zeros((0, config.patch_dim), dtype=config.dtype)
        )


def forward(
    noisy_video: VideoTokens,
    refs: Sequence[VideoTokens],
    prompt: PromptTokens,
    t: float,
    params: "ParamStore | dict[str, Tensor]",
    config: DiTConfig,
    cond: Conditioning | None = None,
) -> Tensor:
    """Predict the flow velocity for the video tokens.

    ``noisy_video.tokens`` holds raw patches (n_video x patch_dim); the result
    has the same shape. ``params`` may be a ParamStore (values only) or a
    mapping of Tensors (for differentiation).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestep {t} outside [0, 1]")
    if cond is None:
        cond = Conditioning(refs, prompt, noisy_video.grid, config)
    elif cond.geometry.video != noisy_video.grid:
        raise ValueError("conditioning was built for a different video grid")
    P = params.tensors(requires_grad=False) if isinstance(params, ParamStore) else params

    video = nx.as_tensor(noisy_video.tokens, config.dtype)
    if video.shape[1] != config.patch_dim:
        raise ValueError(f"video tokens have dim {video.shape[1]}, expected patch_dim {config.patch_dim}")
    n_ref = len(cond.ref_tokens)
    refs_in = cond.ref_tokens
    if config.precondition:
        skip, scale, c_in = precondition(t, config.sigma_data)
        refs_in = refs_in / config.sigma_data
        seq_video = video * c_in
    else:
        seq_video = video
    seq = nx.concat([Tensor(refs_in.astype(config.dtype)), seq_video], axis=0) if n_ref else seq_video
    out = backbone(seq, cond, t, P, config)
    out = out[n_ref:] if n_ref else out
    if config.precondition:
        out = video * skip + out * scale
    return out


def precondition(t: float, sigma_data: float) -> tuple[float, float, float]:
    """Skip weight, output scale and input scale for a unit-variance network target.

    With x_t = (1-t) x0 + t eps, Var x0 = sigma^2 and Var eps = 1, the skip is
    the least-squares regression of v = eps - x0 on x_t; the network then only
    has to predict the normalized residual. Clean inputs (t = 0) are scaled by
    1 / sigma, which is also the scale applied to reference tokens.
    """
    s2 = sigma_data * sigma_data
    var_x = (1 - t) ** 2 * s2 + t * t
    cov = t - (1 - t) * s2
    skip = cov / var_x
    scale = math.sqrt(max(1 + s2 - skip * cov, 0.0))
    return skip, scale, 1.0 / math.sqrt(var_x)


def _time_conditioning(t: float, P, config: DiTConfig) -> Tensor:
    emb = Tensor(timestep_embedding(t, config.model_dim, config.dtype))
    h = nx.silu(_linear(emb, P["time.w1"], P["time.b1"]))
    return nx.silu(_linear(h, P["time.w2"], P["time.b2"]))


def backbone(seq: Tensor, cond: Conditioning, t: float, P, config: DiTConfig) -> Tensor:
    """Run the transformer over a full token sequence; returns per-token patch predictions."""
    D, Hh, hd = config.model_dim, config.heads, config.head_dim
    n = seq.shape[0]
    n_ref = len(cond.ref_tokens)

    c = _time_conditioning(t, P, config)
    if n_ref and not config.modulate_refs:
        c_ref = _time_conditioning(0.0, P, config)
        is_ref = np.zeros((n, 1), dtype=config.dtype)
        is_ref[:n_ref] = 1.0
        c = c_ref * is_ref + c * (1.0 - is_ref)

    text = nx.embedding(P["text.table"], cond.prompt.ids)
    m_text = text.shape[0]

    h = _linear(seq, P["patch.w"], P["patch.b"])
    for i in range(config.depth):
        p = f"blocks.{i}."
        mod = _linear(c, P[p + "mod.w"], P[p + "mod.b"])
        shift1, scale1, gate1 = mod[:, 0:D], mod[:, D : 2 * D], mod[:, 2 * D : 3 * D]
        shift2, scale2, gate2 = mod[:, 3 * D : 4 * D], mod[:, 4 * D : 5 * D], mod[:, 5 * D : 6 * D]

        x = nx.layer_norm(h) * (scale1 + 1.0) + shift1
        qkv = _linear(x, P[p + "attn.wqkv"], P[p + "attn.bqkv"]).reshape(n, 3, Hh, hd)
        q = nx.rotate_pairs(qkv[:, 0], *cond.tables)
        k = nx.rotate_pairs(qkv[:, 1], *cond.tables)
        v = qkv[:, 2]
        h = h + gate1 * _linear(_attend(q, k, v, hd), P[p + "attn.wo"], P[p + "attn.bo"])

        xq = _heads(nx.layer_norm(h) @ P[p + "cross.wq"], n, Hh, hd)
        tk = _heads(text @ P[p + "cross.wk"], m_text, Hh, hd)
        tv = _heads(text @ P[p + "cross.wv"], m_text, Hh, hd)
        h = h + _linear(_attend(xq, tk, tv, hd), P[p + "cross.wo"], P[p + "cross.bo"])

        x = nx.layer_norm(h) * (scale2 + 1.0) + shift2
        mlp = _linear(nx.gelu(_linear(x, P[p + "mlp.w1"], P[p + "mlp.b1"])), P[p + "mlp.w2"], P[p + "mlp.b2"])
        h = h + gate2 * mlp

    fmod = _linear(c, P["final.mod.w"], P["final.mod.b"])
    x = nx.layer_norm(h) * (fmod[:, D:] + 1.0) + fmod[:, :D]
    return _linear(x, P["final.w"], P["final.b"])


def predict(
    noisy_video: VideoTokens,
    refs: Sequence[VideoTokens],
    prompt: PromptTokens,
    t: float,
    params: ParamStore,
    config: DiTConfig,
    cond: Conditioning | None = None,
) -> np.ndarray:
    """Value-only forward returning a numpy array."""
    return forward(noisy_video, refs, prompt, t, params, config, cond).data
