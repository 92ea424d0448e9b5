"""Subject consistency and background decoupling scores for generated videos.

Both scores compare region embeddings with cosine similarity. The default
region embedding is a hand-built descriptor (joint color histogram plus a
gradient-orientation histogram); any extractor with the same interface can be
swapped in, and reports always carry the extractor id.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .datasynth.filters import LUMA


class RegionError(ValueError):
    pass


class SubjectAbsentError(RegionError):
    pass


def _as_unit_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return np.clip(image.astype(np.float64), 0.0, 1.0)


class RegionExtractor(Protocol):
    id: str

    def embed(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


class HistogramExtractor:
    """Joint RGB histogram plus magnitude-weighted unsigned gradient orientations.

    Gradients are forward differences taken only between pixels that are both
    inside the region, so pixels outside the mask never influence the result.
    """

    def __init__(self, color_bins: int = 4, orientation_bins: int = 8):
        self.color_bins = color_bins
        self.orientation_bins = orientation_bins
        self.id = f"hist-rgb{color_bins}-ori{orientation_bins}"

    @property
    def dim(self) -> int:
        return self.color_bins**3 + self.orientation_bins

    def embed(self, image, mask):
        img = _as_unit_image(image)
        mask = np.asarray(mask, dtype=bool)
        if img.ndim != 3 or img.shape[1:] != mask.shape:
            raise RegionError(f"image {img.shape} and mask {mask.shape} disagree")
        if not mask.any():
            raise RegionError("empty region")
        nb = self.color_bins
        q = np.minimum((img[:, mask] * nb).astype(np.int64), nb - 1)
        color = np.bincount(q[0] * nb * nb + q[1] * nb + q[2], minlength=nb**3).astype(np.float64)
        color /= color.sum()

        gray = np.tensordot(LUMA, img, axes=([0], [0]))
        valid = mask[:-1, :-1] & mask[:-1, 1:] & mask[1:, :-1]
        gx = (gray[:-1, 1:] - gray[:-1, :-1])[valid]
        gy = (gray[1:, :-1] - gray[:-1, :-1])[valid]
        mag = np.hypot(gx, gy)
        orient = np.zeros(self.orientation_bins)
        if mag.sum() > 0:
            angle = np.mod(np.arctan2(gy, gx), np.pi)
            idx = np.minimum((angle / np.pi * self.orientation_bins).astype(np.int64), self.orientation_bins - 1)
            orient = np.bincount(idx, weights=mag, minlength=self.orientation_bins)
            orient /= orient.sum()
        vec = np.concatenate([color, orient])
        return vec / np.linalg.norm(vec)


DEFAULT_EXTRACTOR = HistogramExtractor()


def embed_region(image, mask, extractor: RegionExtractor = DEFAULT_EXTRACTOR) -> np.ndarray:
    return extractor.embed(image, mask)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


RefPair = tuple[np.ndarray, np.ndarray]


def s2v_consistency(
    video: np.ndarray,
    masks: np.ndarray,
    refs: Sequence[RefPair],
    extractor: RegionExtractor = DEFAULT_EXTRACTOR,
) -> float:
    """Mean over frames (with the subject present) of the best subject similarity to any reference."""
    if not refs:
        raise RegionError("need at least one reference")
    ref_emb = [extractor.embed(img, m) for img, m in refs]
    scores = []
    for frame, mask in zip(video, masks):
        if not np.asarray(mask).any():
            continue
        e = extractor.embed(frame, mask)
        scores.append(max(cosine(e, r) for r in ref_emb))
    if not scores:
        raise SubjectAbsentError("subject absent: no frame has a non-empty subject mask")
    return float(np.mean(scores))


def s2v_decoupling(
    video: np.ndarray,
    masks: np.ndarray,
    refs: Sequence[RefPair],
    extractor: RegionExtractor = DEFAULT_EXTRACTOR,
) -> float:
    """One minus the mean background similarity over all (frame, reference) pairs.

    ``masks`` mark subject pixels (frames x H x W); backgrounds are their
    complements.
    """
    if not refs:
        raise RegionError("need at least one reference")
    frames = [extractor.embed(f, ~np.asarray(m, dtype=bool)) for f, m in zip(video, masks)]
    backs = [extractor.embed(img, ~np.asarray(m, dtype=bool)) for img, m in refs]
    return 1.0 - float(np.mean([cosine(f, b) for f in frames for b in backs]))


# mask sources


class MaskSource(Protocol):
    id: str

    def subject_masks(self, video: np.ndarray, record, subject: int) -> np.ndarray: ...


class OracleMaskSource:
    """Ground-truth masks of the source record."""

    id = "oracle"

    def subject_masks(self, video, record, subject):
        return np.asarray(record.masks[:, subject], dtype=bool)


class ColorMaskSource:
    """Pixels whose color lies within ``tolerance`` of one of the reference subject's colors."""

    id = "color-threshold"

    def __init__(self, tolerance: float = 0.12):
        self.tolerance = tolerance

    def subject_masks(self, video, record, subject):
        ref = next(r for r in record.refs if r.subject == subject)
        palette = np.unique(_as_unit_image(ref.image)[:, ref.mask].T, axis=0)
        v = _as_unit_image(video)  # F x 3 x H x W
        pix = np.moveaxis(v, 1, -1)[..., None, :]  # F x H x W x 1 x 3
        dist = np.abs(pix - palette).max(axis=-1).min(axis=-1)
        return dist <= self.tolerance


MASK_SOURCES = {"oracle": OracleMaskSource, "color-threshold": ColorMaskSource}
EXTRACTORS = {DEFAULT_EXTRACTOR.id: HistogramExtractor}


# reports


@dataclass
class SampleScore:
    sample_id: str
    consistency: float
    decoupling: float


@dataclass
class MetricReport:
    extractor: str
    mask_source: str
    samples: list[SampleScore] = field(default_factory=list)
    similarity: str = "cosine"
    consistency_aggregation: str = "per subject: mean over frames of max over that subject's references; mean over subjects"
    decoupling_aggregation: str = "mean over all (frame, reference) background pairs"

    @property
    def mean_consistency(self) -> float:
        return float(np.mean([s.consistency for s in self.samples])) if self.samples else float("nan")

    @property
    def mean_decoupling(self) -> float:
        return float(np.mean([s.decoupling for s in self.samples])) if self.samples else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_consistency"] = self.mean_consistency
        d["mean_decoupling"] = self.mean_decoupling
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d.pop("mean_consistency", None)
        d.pop("mean_decoupling", None)
        d["samples"] = [SampleScore(**s) for s in d["samples"]]
        return cls(**d)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    def table(self) -> str:
        lines = [f"{'sample':<10} {'consistency':>12} {'decoupling':>11}"]
        for s in self.samples:
            lines.append(f"{s.sample_id:<10} {s.consistency:>12.6f} {s.decoupling:>11.6f}")
        lines.append(f"{'mean':<10} {self.mean_consistency:>12.6f} {self.mean_decoupling:>11.6f}")
        return "\n".join(lines)


def score_sample(
    video: np.ndarray,
    record,
    extractor: RegionExtractor = DEFAULT_EXTRACTOR,
    mask_source: MaskSource | None = None,
) -> SampleScore:
    """Score one generated video against the references of ``record``.

    Consistency is computed per subject against that subject's own
    references, then averaged; decoupling uses the union of subject masks.
    """
    mask_source = mask_source or OracleMaskSource()
    n_subjects = record.masks.shape[1]
    subject_masks = [mask_source.subject_masks(video, record, k) for k in range(n_subjects)]
    cons = []
    for k in range(n_subjects):
        refs = [(r.image, r.mask) for r in record.refs if r.subject == k]
        cons.append(s2v_consistency(video, subject_masks[k], refs, extractor))
    union = np.any(np.stack(subject_masks, axis=1), axis=1)
    dec = s2v_decoupling(video, union, [(r.image, r.mask) for r in record.refs], extractor)
    return SampleScore(record.sample_id, float(np.mean(cons)), dec)
