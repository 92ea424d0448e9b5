"""3D rotary positions for video tokens and reference-image tokens.

Positions are int64 arrays of shape ``(n, 3)`` with columns ``(t, h, w)``.
Reference images follow the video in the positional scheme selected by
:class:`RopeVariant`; the shifted variants move reference tokens past the
video grid's spatial extents so the two never share a coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .numerics import Tensor, as_tensor, rotate_pairs


class PositionTriple(NamedTuple):
    t: int
    h: int
    w: int


class RopeVariant(str, Enum):
    CONCAT = "Concat"
    SHIFT_W = "ShiftW"
    SHIFT_H = "ShiftH"
    SHIFT_WH = "ShiftWH"

    @classmethod
    def parse(cls, name: "str | RopeVariant") -> "RopeVariant":
        if isinstance(name, cls):
            return name
        for v in cls:
            if v.value.lower() == str(name).lower() or v.name.lower() == str(name).lower():
                return v
        raise ValueError(f"unknown rope variant {name!r}; expected one of {[v.value for v in cls]}")


def default_axis_split(head_dim: int) -> tuple[int, int, int]:
    """Split ``head_dim`` roughly 2:3:3 over (t, h, w), each part even."""
    if head_dim < 6 or head_dim % 2:
        raise ValueError(f"head_dim must be even and >= 6, got {head_dim}")
    d_t = max(2, 2 * round(head_dim / 8))
    rest = head_dim - d_t
    d_h = max(2, 2 * (rest // 4))
    return d_t, d_h, rest - d_h


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    axis_split: tuple[int, int, int] = field(default=None)  # type: ignore[assignment]
    base: float = 10000.0

    def __post_init__(self):
        if self.axis_split is None:
            object.__setattr__(self, "axis_split", default_axis_split(self.head_dim))
        split = tuple(int(d) for d in self.axis_split)
        object.__setattr__(self, "axis_split", split)
        if sum(split) != self.head_dim or any(d <= 0 or d % 2 for d in split):
            raise ValueError(f"axis_split {split} must be three positive even parts summing to {self.head_dim}")
        if self.base <= 0:
            raise ValueError("rope base must be positive")


def _check_extents(**extents: int) -> None:
    for name, n in extents.items():
        if int(n) < 1:
            raise ValueError(f"{name} must be >= 1, got {n}")


def video_positions(frames: int, rows: int, cols: int) -> np.ndarray:
    """Row-major (t, h, w) enumeration of a video token grid, starting at zero."""
    _check_extents(frames=frames, rows=rows, cols=cols)
    t, h, w = np.meshgrid(np.arange(frames), np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1).astype(np.int64)


def reference_positions(
    image_index: int,
    ref_rows: int,
    ref_cols: int,
    h_max: int,
    w_max: int,
    variant: RopeVariant,
    video_frames: int,
    per_image_t_zero: bool = False,
) -> np.ndarray:
    """Positions for the tokens of reference image ``image_index`` (1-based).

    ``per_image_t_zero`` places every image at t=0 instead of t=i-1
    (experimental; it gives all same-sized references identical positions).
    """
    if image_index < 1:
        raise ValueError(f"image_index is 1-based, got {image_index}")
    _check_extents(ref_rows=ref_rows, ref_cols=ref_cols, h_max=h_max, w_max=w_max, video_frames=video_frames)
    variant = RopeVariant.parse(variant)
    h0 = h_max if variant in (RopeVariant.SHIFT_H, RopeVariant.SHIFT_WH) else 0
    w0 = w_max if variant in (RopeVariant.SHIFT_W, RopeVariant.SHIFT_WH) else 0
    if per_image_t_zero:
        t = 0
    elif variant is RopeVariant.CONCAT:
        t = video_frames + image_index - 1
    else:
        t = image_index - 1
    h, w = np.meshgrid(np.arange(h0, h0 + ref_rows), np.arange(w0, w0 + ref_cols), indexing="ij")
    out = np.empty((ref_rows * ref_cols, 3), dtype=np.int64)
    out[:, 0] = t
    out[:, 1] = h.ravel()
    out[:, 2] = w.ravel()
    return out


@dataclass(frozen=True)
class SequenceGeometry:
    """Token-grid extents of one conditioned sequence: video (T, H, W) plus reference (r, c) grids."""

    video: tuple[int, int, int]
    refs: tuple[tuple[int, int], ...] = ()

    @property
    def n_ref_tokens(self) -> int:
        return sum(r * c for r, c in self.refs)

    @property
    def n_video_tokens(self) -> int:
        t, h, w = self.video
        return t * h * w


def assemble_positions(
    geometry: SequenceGeometry, variant: RopeVariant, per_image_t_zero: bool = False
) -> np.ndarray:
    """Positions of the sequence ``[ref_1, ..., ref_n, video]``."""
    T, H, W = geometry.video
    parts = [
        reference_positions(i, r, c, H, W, variant, T, per_image_t_zero)
        for i, (r, c) in enumerate(geometry.refs, start=1)
    ]
    parts.append(video_positions(T, H, W))
    return np.concatenate(parts, axis=0)


def rope_angles(positions: np.ndarray, config: RopeConfig) -> np.ndarray:
    """Rotation angle of every (token, pair) as an array ``(n, head_dim // 2)``."""
    positions = np.asarray(positions, dtype=np.float64)
    cols = []
    for axis, d in enumerate(config.axis_split):
        k = np.arange(d // 2, dtype=np.float64)
        freqs = config.base ** (-2.0 * k / d)
        cols.append(positions[:, axis : axis + 1] * freqs[None, :])
    return np.concatenate(cols, axis=1)


def rope_tables(positions: np.ndarray, config: RopeConfig, angle_scale: float = 1.0):
    """cos/sin tables shaped ``(n, 1, head_dim // 2)`` for broadcasting over heads."""
    ang = rope_angles(positions, config) * angle_scale
    return np.cos(ang)[:, None, :], np.sin(ang)[:, None, :]


def apply_rope(
    x: "Tensor | np.ndarray",
    positions: "np.ndarray | Sequence[PositionTriple]",
    config: RopeConfig,
    angle_scale: float = 1.0,
    tables=None,
) -> Tensor:
    """Rotate ``x`` (tokens x heads x head_dim) by its tokens' positions.

    Each axis owns a contiguous even slice of ``head_dim``; pair ``k`` of the
    slice for axis ``a`` turns by ``pos_a * base**(-2k/d_a)``. ``angle_scale=0``
    is a diagnostic mode that removes all positional information.
    """
    x = as_tensor(x)
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 3)
    if x.ndim != 3:
        raise ValueError(f"apply_rope expects tokens x heads x head_dim, got {x.shape}")
    if x.shape[0] != len(positions):
        raise ValueError(f"{len(positions)} positions for {x.shape[0]} tokens")
    if x.shape[2] != config.head_dim:
        raise ValueError(f"head_dim {x.shape[2]} does not match rope config {config.head_dim}")
    cos, sin = tables if tables is not None else rope_tables(positions, config, angle_scale)
    return rotate_pairs(x, cos, sin)
