"""Pluggable stand-ins for the captioning, grounding, verification and face models.

The shipped implementations read ground truth straight from the renderer.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .reference import Reference, ReferenceMode, make_reference
from .scene import RenderedScene


class CaptionBackend(Protocol):
    def caption(self, scene: RenderedScene) -> str: ...


class GroundingBackend(Protocol):
    def ground(self, scene: RenderedScene, categories: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Return (masks frames x k x H x W, boxes frames x k x 4) for each requested category."""
        ...


class CategoryVerifier(Protocol):
    def verify(self, scene: RenderedScene, subject: int, category: str) -> bool: ...


class FaceValidator(Protocol):
    def valid(self, image: np.ndarray, mask: np.ndarray) -> bool: ...


class ReferenceSynthesizer(Protocol):
    def make(self, scene: RenderedScene, subject: int, mode: ReferenceMode, seed: int) -> Reference: ...


class OracleCaptioner:
    id = "oracle-template"

    def caption(self, scene: RenderedScene) -> str:
        return scene.spec.caption()


class OracleGrounding:
    """Assigns each category to the first unclaimed subject of that shape."""

    id = "oracle-masks"

    def ground(self, scene, categories):
        claimed: list[int] = []
        for cat in categories:
            idx = next(
                (k for k, s in enumerate(scene.spec.subjects) if s.shape == cat and k not in claimed),
                None,
            )
            if idx is None:
                raise LookupError(f"no subject of category {cat!r} in scene")
            claimed.append(idx)
        return scene.masks[:, claimed], scene.boxes[:, claimed]


class OracleCategoryVerifier:
    id = "oracle-shape"

    def verify(self, scene, subject, category):
        return scene.spec.subjects[subject].shape == category


class AcceptAllFaces:
    """Sprites have no faces; every instance passes."""

    id = "stub-accept"

    def valid(self, image, mask):
        return True


class SpriteReferenceSynthesizer:
    """Re-renders subjects in the sprite world in place of inpainting / pose synthesis."""

    id = "sprite-rerender"

    def __init__(self, ref_size: tuple[int, int] | None = None):
        self.ref_size = ref_size

    def make(self, scene, subject, mode, seed):
        return make_reference(scene, subject, mode, seed, self.ref_size)
