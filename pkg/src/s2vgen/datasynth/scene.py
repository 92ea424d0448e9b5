"""Procedural sprite world: textured backgrounds with shapes on scripted trajectories."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .vocab import BACKGROUNDS, COLOR_NAMES, COLORS, SHAPES


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectSpec:
    """One sprite. ``size`` is the circumradius in pixels; motion is linear."""

    shape: str
    fill: int
    size: float
    start: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0
    spin: float = 0.0

    def center(self, frame: int) -> tuple[float, float]:
        return (self.start[0] + self.velocity[0] * frame, self.start[1] + self.velocity[1] * frame)

    def angle(self, frame: int) -> float:
        return self.rotation + self.spin * frame

    @property
    def motion_word(self) -> str:
        vx, vy = self.velocity
        if math.hypot(vx, vy) < 0.25:
            return "still"
        if abs(vx) >= abs(vy):
            return "right" if vx > 0 else "left"
        return "down" if vy > 0 else "up"

    @property
    def color_name(self) -> str:
        return COLOR_NAMES[self.fill]


@dataclass(frozen=True)
class SceneSpec:
    subjects: tuple[SubjectSpec, ...]
    background: int
    frames: int = 8
    resolution: tuple[int, int] = (32, 32)
    seed: int = 0

    def validate(self) -> None:
        H, W = self.resolution
        if not 1 <= len(self.subjects) <= 3:
            raise SceneError(f"scene needs 1..3 subjects, got {len(self.subjects)}")
        if not 0 <= self.background < len(BACKGROUNDS):
            raise SceneError(f"unknown background id {self.background}")
        if self.frames < 1 or H < 1 or W < 1:
            raise SceneError("frames and resolution must be positive")
        for k, s in enumerate(self.subjects):
            if s.shape not in SHAPES:
                raise SceneError(f"subject {k}: unknown shape {s.shape!r}")
            if not 0 <= s.fill < len(COLORS):
                raise SceneError(f"subject {k}: unknown fill id {s.fill}")
            if s.size <= 0:
                raise SceneError(f"subject {k}: size must be positive")
            for f in range(self.frames):
                cx, cy = s.center(f)
                if cx - s.size < 0 or cx + s.size > W or cy - s.size < 0 or cy + s.size > H:
                    raise SceneError(f"subject {k} leaves the frame at frame {f} (center {cx:.2f},{cy:.2f})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        subjects = tuple(
            SubjectSpec(**{**s, "start": tuple(s["start"]), "velocity": tuple(s["velocity"])}) for s in d["subjects"]
        )
        return cls(subjects, d["background"], d["frames"], tuple(d["resolution"]), d["seed"])

    def caption(self, with_color: bool = False) -> str:
        """Template caption. Fill colors are left out by default so appearance must come from references."""
        parts = []
        for s in self.subjects:
            motion = "still" if s.motion_word == "still" else f"moving {s.motion_word}"
            name = f"{s.color_name} {s.shape}" if with_color else s.shape
            parts.append(f"a {name} {motion}")
        return " and ".join(parts) + f" on {BACKGROUNDS[self.background][0]}"


@dataclass
class RenderedScene:
    video: np.ndarray  # uint8, frames x 3 x H x W
    masks: np.ndarray  # bool, frames x subjects x H x W (visible pixels)
    boxes: np.ndarray  # int64, frames x subjects x 4 as (x0, y0, x1, y1), exclusive max
    spec: SceneSpec = field(repr=False)


# geometry

_TRIANGLE = np.array([[math.cos(a), math.sin(a)] for a in (-math.pi / 2, math.pi / 6, 5 * math.pi / 6)])
_SQUARE = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) / math.sqrt(2)
_DIAMOND = np.array([[1.0, 0.0], [0.0, 0.6], [-1.0, 0.0], [0.0, -0.6]])


def shape_area(shape: str, size: float) -> float:
    """Analytic area for a shape of circumradius ``size``."""
    if shape == "circle":
        return math.pi * size * size
    poly = {"square": _SQUARE, "triangle": _TRIANGLE, "diamond": _DIAMOND}[shape] * size
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def shape_perimeter(shape: str, size: float) -> float:
    if shape == "circle":
        return 2 * math.pi * size
    poly = {"square": _SQUARE, "triangle": _TRIANGLE, "diamond": _DIAMOND}[shape] * size
    return float(np.linalg.norm(poly - np.roll(poly, -1, axis=0), axis=1).sum())


def _local_coords(H: int, W: int, center, angle_deg: float, scale: float):
    ys, xs = np.mgrid[0:H, 0:W]
    dx = xs + 0.5 - center[0]
    dy = ys + 0.5 - center[1]
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    u = (ca * dx + sa * dy) / scale
    v = (-sa * dx + ca * dy) / scale
    return u, v


def _inside_convex(u, v, poly) -> np.ndarray:
    pos = np.ones(u.shape, dtype=bool)
    neg = np.ones(u.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0)
        pos &= cross >= 0
        neg &= cross <= 0
    return pos | neg


def shape_mask(shape: str, size: float, center, angle_deg: float, H: int, W: int, scale: float = 1.0) -> np.ndarray:
    """Pixels whose centers fall inside the shape."""
    u, v = _local_coords(H, W, center, angle_deg, scale)
    if shape == "circle":
        return u * u + v * v <= size * size
    poly = {"square": _SQUARE, "triangle": _TRIANGLE, "diamond": _DIAMOND}[shape] * size
    return _inside_convex(u, v, poly)


def _fill_pixels(fill: int, size: float, center, angle_deg: float, H: int, W: int, scale: float) -> np.ndarray:
    """Two-tone fill: a darker band through the sprite's local x axis shows its orientation."""
    u, v = _local_coords(H, W, center, angle_deg, scale)
    base = np.array(COLORS[COLOR_NAMES[fill]], dtype=np.float64)
    band = np.abs(v) <= 0.22 * size
    img = np.empty((3, H, W))
    img[:] = base[:, None, None]
    img[:, band] = np.round(base * 0.6)[:, None]
    return img


def background_texture(background: int, H: int, W: int) -> np.ndarray:
    """uint8 texture, 3 x H x W."""
    _, base, accent, pattern, period = BACKGROUNDS[background]
    ys, xs = np.mgrid[0:H, 0:W]
    half = period // 2
    if pattern == "hstripes":
        sel = (ys // half) % 2 == 1
    elif pattern == "vstripes":
        sel = (xs // half) % 2 == 1
    elif pattern == "checker":
        sel = ((xs // half) + (ys // half)) % 2 == 1
    elif pattern == "diagonal":
        sel = ((xs + ys) // half) % 2 == 1
    elif pattern == "dots":
        sel = ((xs % period) == 1) & ((ys % period) == 1)
    elif pattern == "bricks":
        row = ys // half
        sel = (ys % half == 0) | (((xs + (row % 2) * half) % period) == 0)
    else:
        raise SceneError(f"unknown pattern {pattern}")
    img = np.empty((3, H, W), dtype=np.uint8)
    img[:] = np.array(base, dtype=np.uint8)[:, None, None]
    img[:, sel] = np.array(accent, dtype=np.uint8)[:, None]
    return img


def tight_box(mask: np.ndarray) -> np.ndarray:
    """(x0, y0, x1, y1) with exclusive max; zeros for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return np.zeros(4, dtype=np.int64)
    return np.array([cols[0], rows[0], cols[-1] + 1, rows[-1] + 1], dtype=np.int64)


def render_sprite(
    subject: SubjectSpec,
    background_img: np.ndarray,
    center,
    angle_deg: float,
    scale: float = 1.0,
):
    """Composite one sprite over ``background_img`` (uint8, modified copy returned) and return its mask."""
    _, H, W = background_img.shape
    mask = shape_mask(subject.shape, subject.size, center, angle_deg, H, W, scale)
    fill = _fill_pixels(subject.fill, subject.size, center, angle_deg, H, W, scale)
    out = background_img.copy()
    out[:, mask] = fill[:, mask].astype(np.uint8)
    return out, mask


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Rasterize every frame. Later subjects occlude earlier ones; masks hold visible pixels."""
    spec.validate()
    H, W = spec.resolution
    F, S = spec.frames, len(spec.subjects)
    bg = background_texture(spec.background, H, W)
    video = np.empty((F, 3, H, W), dtype=np.uint8)
    masks = np.zeros((F, S, H, W), dtype=bool)
    boxes = np.zeros((F, S, 4), dtype=np.int64)
    for f in range(F):
        frame = bg
        for k, s in enumerate(spec.subjects):
            frame, m = render_sprite(s, frame, s.center(f), s.angle(f))
            masks[f, :k] &= ~m
            masks[f, k] = m
        video[f] = frame
        for k in range(S):
            boxes[f, k] = tight_box(masks[f, k])
    return RenderedScene(video, masks, boxes, spec)
