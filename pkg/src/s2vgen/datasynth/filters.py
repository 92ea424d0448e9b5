"""Sample-quality filters: subject size, overlap, brightness and blur."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
FILTER_ORDER = ("size", "iou", "brightness", "blur")


@dataclass(frozen=True)
class FilterConfig:
    min_area: float = 0.01
    max_area: float = 0.5
    max_iou: float = 0.3
    min_brightness: float = 0.05
    max_brightness: float = 0.95
    min_blur: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.min_area < self.max_area <= 1:
            raise ValueError("need 0 <= min_area < max_area <= 1")
        if self.max_iou < 0 or self.min_blur < 0:
            raise ValueError("thresholds must be non-negative")
        if not 0 <= self.min_brightness <= self.max_brightness <= 1:
            raise ValueError("need 0 <= min_brightness <= max_brightness <= 1")


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def iou(box_a, box_b) -> float:
    """Intersection over union of (x0, y0, x1, y1) boxes; 0 for a zero-area union."""
    ax0, ay0, ax1, ay1 = (float(v) for v in box_a)
    bx0, by0, bx1, by1 = (float(v) for v in box_b)
    if ax1 < ax0 or ay1 < ay0 or bx1 < bx0 or by1 < by0:
        raise ValueError("boxes must have non-negative extent")
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def luminance(video: np.ndarray) -> np.ndarray:
    """Per-pixel luminance in [0, 1] of a uint8 or [0, 1] float frames x 3 x H x W video."""
    v = np.asarray(video, dtype=np.float64)
    if np.asarray(video).dtype == np.uint8:
        v = v / 255.0
    return np.tensordot(v, LUMA, axes=([1], [0]))


def laplacian_variance(gray: np.ndarray) -> float:
    """Variance of the 3x3 (4-neighbour) Laplacian over interior pixels."""
    g = np.asarray(gray, dtype=np.float64)
    lap = g[1:-1, :-2] + g[1:-1, 2:] + g[:-2, 1:-1] + g[2:, 1:-1] - 4.0 * g[1:-1, 1:-1]
    return float(lap.var())


def blur_score(video: np.ndarray) -> float:
    return laplacian_variance(luminance(video).mean(axis=0))


def filter_sample(video: np.ndarray, masks: np.ndarray, boxes: np.ndarray, cfg: FilterConfig) -> Verdict:
    """Check size, IoU, brightness, blur in that order; the first failure names the verdict."""
    F, S, H, W = masks.shape
    area = masks.reshape(F, S, -1).mean(axis=2)
    bad = np.argwhere((area < cfg.min_area) | (area > cfg.max_area))
    if len(bad):
        f, s = bad[0]
        return Verdict(False, "size", f"subject {s} frame {f} area fraction {area[f, s]:.4f}")
    for f in range(F):
        for a, b in combinations(range(S), 2):
            o = iou(boxes[f, a], boxes[f, b])
            if o > cfg.max_iou:
                return Verdict(False, "iou", f"subjects {a},{b} frame {f} iou {o:.3f}")
    lum = float(luminance(video).mean())
    if not cfg.min_brightness <= lum <= cfg.max_brightness:
        return Verdict(False, "brightness", f"mean luminance {lum:.4f}")
    blur = blur_score(video)
    if blur < cfg.min_blur:
        return Verdict(False, "blur", f"laplacian variance {blur:.3g}")
    return Verdict(True)
