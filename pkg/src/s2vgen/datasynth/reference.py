"""Reference-image construction: naive in-video crops, cross-paired and pose-enriched re-renders."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..numerics import stream
from .scene import RenderedScene, SceneError, background_texture, render_sprite
from .vocab import BACKGROUNDS


class ReferenceMode(str, Enum):
    IN_VIDEO_FRAME = "in_video_frame"
    CROSS_PAIRED = "cross_paired"
    POSE_ENRICHED = "pose_enriched"


@dataclass
class Reference:
    image: np.ndarray  # uint8, 3 x h x w
    mask: np.ndarray  # bool, h x w
    subject: int
    background: int
    mode: ReferenceMode
    frame: int  # source frame (pose donor)
    angle: float
    scale: float

    @property
    def cross_paired(self) -> bool:
        return self.mode is not ReferenceMode.IN_VIDEO_FRAME

    @property
    def pose_enriched(self) -> bool:
        return self.mode is ReferenceMode.POSE_ENRICHED


def _crop_window(center: float, size: int, extent: int) -> int:
    lo = int(round(center - size / 2))
    return min(max(lo, 0), extent - size)


def make_reference(
    scene: RenderedScene,
    subject: int,
    mode: "ReferenceMode | str",
    seed: int,
    ref_size: tuple[int, int] | None = None,
    pose_rotation: float = 30.0,
    pose_scale: float = 1.2,
) -> Reference:
    """Build one reference image of ``subject``.

    ``in_video_frame`` crops a video frame around the subject. The other modes
    re-render the subject alone on a different background; ``pose_enriched``
    also turns it ``pose_rotation`` degrees past every angle it shows in the
    video and scales it by ``pose_scale``.
    """
    mode = ReferenceMode(mode)
    spec = scene.spec
    if not 0 <= subject < len(spec.subjects):
        raise SceneError(f"subject {subject} does not exist (scene has {len(spec.subjects)})")
    H, W = spec.resolution
    h, w = ref_size or (H, W)
    if h > H or w > W:
        raise SceneError(f"reference size {(h, w)} exceeds frame size {(H, W)}")
    rng = stream(seed, "reference", subject, mode.value)
    frame = int(rng.integers(spec.frames))
    sub = spec.subjects[subject]

    if mode is ReferenceMode.IN_VIDEO_FRAME:
        x0, y0, x1, y1 = scene.boxes[frame, subject]
        top = _crop_window((y0 + y1) / 2, h, H)
        left = _crop_window((x0 + x1) / 2, w, W)
        image = scene.video[frame, :, top : top + h, left : left + w].copy()
        mask = scene.masks[frame, subject, top : top + h, left : left + w].copy()
        return Reference(image, mask, subject, spec.background, mode, frame, sub.angle(frame), 1.0)

    others = [b for b in range(len(BACKGROUNDS)) if b != spec.background]
    if not others:
        raise SceneError("no alternative background available for a cross-paired reference")
    background = int(others[rng.integers(len(others))])
    angle, scale = sub.angle(frame), 1.0
    if mode is ReferenceMode.POSE_ENRICHED:
        angles = [sub.angle(f) for f in range(spec.frames)]
        angle = (max(angles) + pose_rotation) if sub.spin >= 0 else (min(angles) - pose_rotation)
        scale = pose_scale
    if sub.size * scale > min(h, w) / 2:
        raise SceneError(f"subject of radius {sub.size * scale:.1f} does not fit a {h}x{w} reference")
    canvas = background_texture(background, h, w)
    image, mask = render_sprite(sub, canvas, (w / 2, h / 2), angle, scale)
    return Reference(image, mask, subject, background, mode, frame, angle, scale)
