"""Corpus generation: sample scenes, run the pipeline stages, write records to disk."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..harness.tensorio import read_tensor_file, write_tensor_file
from ..numerics import stream, stream_key
from . import backends as bk
from .filters import FILTER_ORDER, FilterConfig, filter_sample
from .reference import Reference, ReferenceMode
from .scene import RenderedScene, SceneSpec, SubjectSpec, render_scene
from .taxonomy import DEFAULT_TAXONOMY, Taxonomy, match_taxonomy
from .vocab import BACKGROUNDS, COLORS, MOTIONS, SHAPES, encode

log = logging.getLogger(__name__)

SCHEMA = "s2vgen.dataset/1"
MODES = (ReferenceMode.CROSS_PAIRED, ReferenceMode.POSE_ENRICHED, ReferenceMode.IN_VIDEO_FRAME)


class CorpusError(RuntimeError):
    def __init__(self, message: str, stats: dict | None = None):
        super().__init__(message)
        self.stats = stats or {}


@dataclass(frozen=True)
class SceneConfig:
    frames: int = 8
    resolution: tuple[int, int] = (32, 32)
    ref_size: tuple[int, int] | None = None
    max_subjects: int = 2
    p_still: float = 0.25
    size_range: tuple[float, float] = (0.25, 0.38)
    spins: tuple[float, ...] = (0.0, 0.0, 5.0, -5.0, 10.0, -10.0)
    layout: str = "canonical"

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(self.resolution))
        if self.ref_size is not None:
            object.__setattr__(self, "ref_size", tuple(self.ref_size))
        object.__setattr__(self, "size_range", tuple(self.size_range))
        object.__setattr__(self, "spins", tuple(self.spins))
        if not 1 <= self.max_subjects <= 3:
            raise ValueError("max_subjects must be in 1..3")
        if self.layout not in ("canonical", "random"):
            raise ValueError(f"layout must be 'canonical' or 'random', got {self.layout!r}")

    @property
    def reference_size(self) -> tuple[int, int]:
        return self.ref_size or self.resolution


@dataclass
class SampleRecord:
    sample_id: str
    video: np.ndarray  # uint8 frames x 3 x H x W
    masks: np.ndarray  # bool frames x subjects x H x W
    boxes: np.ndarray  # int64 frames x subjects x 4
    refs: list[Reference]
    caption: str
    prompt_ids: list[int]
    spec: SceneSpec
    mode: ReferenceMode
    attempt: int = 0

    @property
    def cross_paired(self) -> bool:
        return all(r.cross_paired for r in self.refs)

    @property
    def pose_enriched(self) -> bool:
        return all(r.pose_enriched for r in self.refs)

    @property
    def background(self) -> int:
        return self.spec.background


def _split_regions(n: int, H: int, W: int, vertical: bool):
    if vertical:
        edges = np.linspace(0, W, n + 1)
        return [(edges[i], 0.0, edges[i + 1], float(H)) for i in range(n)]
    edges = np.linspace(0, H, n + 1)
    return [(0.0, edges[i], float(W), edges[i + 1]) for i in range(n)]


SIZE_FRACTION = {"circle": 0.30, "square": 0.34, "triangle": 0.38, "diamond": 0.36}
_MARGIN = 0.25


def canonical_path(motion: str, size: float, region, frames: int):
    """Start point and velocity of a subject whose motion word fully determines its path."""
    x0, y0, x1, y1 = region
    lo_x, hi_x = x0 + size + _MARGIN, x1 - size - _MARGIN
    lo_y, hi_y = y0 + size + _MARGIN, y1 - size - _MARGIN
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    start, end = {
        "still": ((cx, cy), (cx, cy)),
        "left": ((hi_x, cy), (lo_x, cy)),
        "right": ((lo_x, cy), (hi_x, cy)),
        "up": ((cx, hi_y), (cx, lo_y)),
        "down": ((cx, lo_y), (cx, hi_y)),
    }[motion]
    steps = max(frames - 1, 1)
    return start, ((end[0] - start[0]) / steps, (end[1] - start[1]) / steps)


def random_scene(cfg: SceneConfig, seed: int, index: int) -> SceneSpec:
    """Sample a scene; subjects move inside disjoint strips of the frame.

    With ``layout="canonical"`` subjects sit in left-to-right strips, have a
    per-shape size, no rotation, and a path fixed by their motion word, so the
    caption determines the layout. ``layout="random"`` draws sizes, strip
    orientation, paths and rotations freely.
    """
    rng = stream(seed, "scene", index)
    H, W = cfg.resolution
    n = int(rng.integers(1, cfg.max_subjects + 1))
    canonical = cfg.layout == "canonical"
    regions = _split_regions(n, H, W, True if canonical else bool(rng.integers(2)))
    fills = rng.permutation(len(COLORS))[:n]
    subjects = []
    for k, (x0, y0, x1, y1) in enumerate(regions):
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        extent = min(x1 - x0, y1 - y0)
        if canonical:
            size = SIZE_FRACTION[shape] * extent
            start, velocity = canonical_path(MOTIONS[int(rng.integers(len(MOTIONS)))], size, (x0, y0, x1, y1), cfg.frames)
            rotation, spin = 0.0, 0.0
        else:
            size = float(rng.uniform(*cfg.size_range)) * extent
            lo_x, hi_x = x0 + size + _MARGIN, x1 - size - _MARGIN
            lo_y, hi_y = y0 + size + _MARGIN, y1 - size - _MARGIN
            start = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
            end = start if rng.random() < cfg.p_still else (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
            steps = max(cfg.frames - 1, 1)
            velocity = ((end[0] - start[0]) / steps, (end[1] - start[1]) / steps)
            rotation = float(rng.uniform(0.0, 360.0))
            spin = float(cfg.spins[int(rng.integers(len(cfg.spins)))])
        subjects.append(
            SubjectSpec(shape, int(fills[k]), float(size), tuple(map(float, start)), tuple(map(float, velocity)), rotation, spin)
        )
    spec = SceneSpec(tuple(subjects), int(rng.integers(len(BACKGROUNDS))), cfg.frames, cfg.resolution, seed)
    spec.validate()
    return spec


def mode_schedule(count: int, mix: tuple[float, float, float], seed: int) -> list[ReferenceMode]:
    """Exact per-mode counts (largest remainder), shuffled deterministically."""
    mix = tuple(float(m) for m in mix)
    if len(mix) != 3 or any(m < 0 for m in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError(f"mix must be three non-negative fractions summing to 1, got {mix}")
    raw = [m * count for m in mix]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: count - sum(counts)]:
        counts[i] += 1
    modes = [m for m, c in zip(MODES, counts) for _ in range(c)]
    perm = stream(seed, "modes").permutation(count)
    return [modes[i] for i in perm]


@dataclass
class Pipeline:
    taxonomy: Taxonomy = DEFAULT_TAXONOMY
    captioner: bk.CaptionBackend = field(default_factory=bk.OracleCaptioner)
    grounding: bk.GroundingBackend = field(default_factory=bk.OracleGrounding)
    verifier: bk.CategoryVerifier = field(default_factory=bk.OracleCategoryVerifier)
    faces: bk.FaceValidator = field(default_factory=bk.AcceptAllFaces)
    synthesizer: bk.ReferenceSynthesizer | None = None

    def process(
        self, scene: RenderedScene, mode: ReferenceMode, seed: int, filters: FilterConfig, ref_size=None
    ) -> tuple[str | None, dict]:
        """Run stages 1-6 on one rendered scene. Returns (reject reason or None, products)."""
        caption = self.captioner.caption(scene)
        matches = match_taxonomy(caption, self.taxonomy)
        if len(matches) != len(scene.spec.subjects):
            return "taxonomy", {}
        categories = [m.category for m in matches]
        try:
            masks, boxes = self.grounding.ground(scene, categories)
        except LookupError:
            return "grounding", {}
        if not all(self.verifier.verify(scene, k, c) for k, c in enumerate(categories)):
            return "category", {}
        verdict = filter_sample(scene.video, masks, boxes, filters)
        if not verdict:
            return verdict.reason, {}
        synth = self.synthesizer or bk.SpriteReferenceSynthesizer(ref_size)
        refs = [synth.make(scene, k, mode, seed) for k in range(len(scene.spec.subjects))]
        if not all(self.faces.valid(r.image, r.mask) for r in refs):
            return "face", {}
        return None, {"caption": caption, "masks": masks, "boxes": boxes, "refs": refs}


def generate_records(
    count: int,
    mix: tuple[float, float, float],
    seed: int,
    scene_cfg: SceneConfig | None = None,
    filters: FilterConfig | None = None,
    pipeline: Pipeline | None = None,
) -> tuple[list[SampleRecord], dict]:
    """Generate ``count`` accepted records. Aborts once rejections exceed half of all attempts."""
    scene_cfg = scene_cfg or SceneConfig()
    filters = filters or FilterConfig()
    pipeline = pipeline or Pipeline()
    modes = mode_schedule(count, mix, seed)
    rejected = {r: 0 for r in ("taxonomy", "grounding", "category", *FILTER_ORDER, "face")}
    records: list[SampleRecord] = []
    attempt = 0
    while len(records) < count:
        spec = random_scene(scene_cfg, seed, attempt)
        scene = render_scene(spec)
        mode = modes[len(records)]
        ref_seed = stream_key(seed, "ref", attempt) % (2**63)
        reason, out = pipeline.process(scene, mode, ref_seed, filters, scene_cfg.reference_size)
        attempt += 1
        if reason is not None:
            rejected[reason] += 1
            if sum(rejected.values()) > count:
                stats = {"generated": attempt, "accepted": len(records), "rejected": rejected}
                raise CorpusError(f"filters rejected more than half of the generated scenes: {stats}", stats)
            continue
        records.append(
            SampleRecord(
                sample_id=f"s{len(records):05d}",
                video=scene.video,
                masks=out["masks"],
                boxes=out["boxes"],
                refs=out["refs"],
                caption=out["caption"],
                prompt_ids=encode(out["caption"]),
                spec=spec,
                mode=mode,
                attempt=attempt - 1,
            )
        )
    stats = {"generated": attempt, "accepted": len(records), "rejected": rejected}
    log.info("corpus: %s", stats)
    return records, stats


# disk format


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_records(records: list[SampleRecord], out_dir, meta: dict) -> Path:
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        files = {
            "video": f"samples/{rec.sample_id}/video.s2vt",
            "masks": f"samples/{rec.sample_id}/masks.s2vt",
        }
        write_tensor_file(rec.video, out / files["video"])
        write_tensor_file(rec.masks.astype(np.uint8), out / files["masks"])
        refs = []
        for j, r in enumerate(rec.refs):
            img, msk = f"samples/{rec.sample_id}/ref{j}.s2vt", f"samples/{rec.sample_id}/refmask{j}.s2vt"
            write_tensor_file(r.image, out / img)
            write_tensor_file(r.mask.astype(np.uint8), out / msk)
            refs.append(
                {
                    "image": img,
                    "mask": msk,
                    "subject": r.subject,
                    "background": r.background,
                    "mode": r.mode.value,
                    "frame": r.frame,
                    "angle": r.angle,
                    "scale": r.scale,
                }
            )
        entries.append(
            {
                "id": rec.sample_id,
                "files": files,
                "refs": refs,
                "caption": rec.caption,
                "prompt_ids": rec.prompt_ids,
                "mode": rec.mode.value,
                "cross_paired": rec.cross_paired,
                "pose_enriched": rec.pose_enriched,
                "background": rec.background,
                "boxes": rec.boxes.tolist(),
                "scene": rec.spec.to_dict(),
                "attempt": rec.attempt,
            }
        )
    manifest = {"schema": SCHEMA, **meta, "samples": entries}
    _dump_json(manifest, out / "manifest.json")
    return out / "manifest.json"


def build_corpus(
    out_dir,
    count: int,
    mix: tuple[float, float, float],
    seed: int,
    scene_cfg: SceneConfig | None = None,
    filters: FilterConfig | None = None,
    pipeline: Pipeline | None = None,
) -> dict:
    """Generate, filter and write a corpus; returns the manifest dict."""
    scene_cfg = scene_cfg or SceneConfig()
    filters = filters or FilterConfig()
    records, stats = generate_records(count, mix, seed, scene_cfg, filters, pipeline)
    meta = {
        "count": count,
        "mix": {"cross_paired": mix[0], "pose_enriched": mix[1], "naive": mix[2]},
        "seed": seed,
        "scene_config": asdict(scene_cfg),
        "filter_config": asdict(filters),
        "filter_stats": stats,
    }
    path = write_records(records, out_dir, meta)
    return json.loads(path.read_text())


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported schema {manifest.get('schema')!r}")
    return manifest


def load_records(dataset_dir, ids: list[str] | None = None) -> list[SampleRecord]:
    root = Path(dataset_dir)
    manifest = load_manifest(root)
    wanted = set(ids) if ids is not None else None
    out = []
    for e in manifest["samples"]:
        if wanted is not None and e["id"] not in wanted:
            continue
        refs = [
            Reference(
                image=read_tensor_file(root / r["image"]),
                mask=read_tensor_file(root / r["mask"]).astype(bool),
                subject=r["subject"],
                background=r["background"],
                mode=ReferenceMode(r["mode"]),
                frame=r["frame"],
                angle=r["angle"],
                scale=r["scale"],
            )
            for r in e["refs"]
        ]
        out.append(
            SampleRecord(
                sample_id=e["id"],
                video=read_tensor_file(root / e["files"]["video"]),
                masks=read_tensor_file(root / e["files"]["masks"]).astype(bool),
                boxes=np.asarray(e["boxes"], dtype=np.int64),
                refs=refs,
                caption=e["caption"],
                prompt_ids=list(e["prompt_ids"]),
                spec=SceneSpec.from_dict(e["scene"]),
                mode=ReferenceMode(e["mode"]),
                attempt=e["attempt"],
            )
        )
    return out
