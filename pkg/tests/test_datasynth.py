import json
import re
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from s2vgen.datasynth import corpus as cp
from s2vgen.datasynth.filters import FilterConfig, blur_score, filter_sample, iou
from s2vgen.datasynth.reference import ReferenceMode, make_reference
from s2vgen.datasynth.scene import (
    SceneError,
    SceneSpec,
    SubjectSpec,
    render_scene,
    shape_area,
    shape_mask,
    shape_perimeter,
    tight_box,
)
from s2vgen.datasynth.taxonomy import DEFAULT_TAXONOMY, Match, Taxonomy, match_taxonomy
from s2vgen.datasynth.vocab import BACKGROUNDS, VOCAB, decode, encode


def scene(*subjects, background=0, frames=4, res=(32, 32)):
    return SceneSpec(tuple(subjects), background, frames, res)


# scenes


def test_static_subject_has_identical_masks():
    r = render_scene(scene(SubjectSpec("square", 0, 6.0, (16.0, 16.0))))
    for f in range(1, 4):
        np.testing.assert_array_equal(r.masks[0], r.masks[f])


def test_disjoint_trajectories_never_overlap():
    a = SubjectSpec("circle", 0, 5.0, (8.0, 8.0), (0.0, 4.0))
    b = SubjectSpec("triangle", 1, 5.0, (24.0, 8.0), (0.0, 4.0))
    r = render_scene(scene(a, b))
    for f in range(4):
        assert iou(r.boxes[f, 0], r.boxes[f, 1]) == 0.0
        assert not (r.masks[f, 0] & r.masks[f, 1]).any()


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["circle", "square", "triangle", "diamond"]),
    st.floats(3.0, 12.0),
    st.floats(-2.0, 2.0),
    st.floats(-2.0, 2.0),
    st.floats(0.0, 360.0),
)
def test_mask_area_matches_analytic_area(shape, size, dx, dy, angle):
    mask = shape_mask(shape, size, (32 + dx, 32 + dy), angle, 64, 64)
    # pixel-center sampling misclassifies only pixels the boundary passes through
    assert abs(mask.sum() - shape_area(shape, size)) <= 0.75 * shape_perimeter(shape, size)


def test_boxes_are_tight_boxes_of_masks():
    spec = cp.random_scene(cp.SceneConfig(layout="random", max_subjects=3), 3, 0)
    r = render_scene(spec)
    for f in range(spec.frames):
        for s in range(len(spec.subjects)):
            np.testing.assert_array_equal(r.boxes[f, s], tight_box(r.masks[f, s]))


def test_occluded_pixels_belong_to_front_subject():
    a = SubjectSpec("square", 0, 6.0, (14.0, 16.0))
    b = SubjectSpec("circle", 1, 6.0, (18.0, 16.0))
    r = render_scene(scene(a, b, frames=1))
    assert not (r.masks[0, 0] & r.masks[0, 1]).any()
    assert r.masks[0, 1].sum() == shape_mask("circle", 6.0, (18.0, 16.0), 0, 32, 32).sum()


def test_escaping_trajectory_rejected():
    with pytest.raises(SceneError, match="leaves the frame"):
        scene(SubjectSpec("circle", 0, 5.0, (8.0, 8.0), (4.0, 0.0)), frames=8).validate()


def test_caption_and_vocabulary():
    spec = scene(SubjectSpec("circle", 0, 5.0, (8.0, 16.0), (2.0, 0.0)), SubjectSpec("square", 1, 4.0, (24.0, 16.0)), background=2)
    assert spec.caption() == f"a circle moving right and a square still on {BACKGROUNDS[2][0]}"
    assert spec.caption(with_color=True).startswith("a red circle")
    assert decode(encode(spec.caption())) == spec.caption()
    with pytest.raises(ValueError):
        encode("a purple circle")
    assert len(set(VOCAB)) == len(VOCAB)


def test_canonical_layout_is_a_function_of_the_caption():
    cfg = cp.SceneConfig()
    seen = {}
    for i in range(200):
        spec = cp.random_scene(cfg, 0, i)
        key = (spec.caption(), len(spec.subjects))
        geom = [(s.size, s.start, s.velocity, s.rotation, s.spin) for s in spec.subjects]
        assert seen.setdefault(key, geom) == geom


def test_scene_roundtrip_through_dict():
    spec = cp.random_scene(cp.SceneConfig(layout="random"), 1, 2)
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# references


@pytest.fixture(scope="module")
def moving_scene():
    sub = SubjectSpec("triangle", 2, 6.0, (10.0, 16.0), (2.0, 0.0), rotation=10.0, spin=5.0)
    return render_scene(scene(sub, background=3, frames=6))


def _outside_differs(ref, bg_video_frame):
    out = ~ref.mask
    return (ref.image[:, out] != bg_video_frame[:, out]).any()


def test_in_video_reference_copies_a_frame(moving_scene):
    ref = make_reference(moving_scene, 0, "in_video_frame", seed=1, ref_size=(16, 16))
    assert ref.background == moving_scene.spec.background and not ref.cross_paired
    inside = ref.image[:, ref.mask]
    hits = []
    for f in range(moving_scene.spec.frames):
        for top in range(32 - 16 + 1):
            for left in range(32 - 16 + 1):
                m = moving_scene.masks[f, 0, top : top + 16, left : left + 16]
                if np.array_equal(m, ref.mask):
                    hits.append(np.array_equal(moving_scene.video[f, :, top : top + 16, left : left + 16][:, m], inside))
    assert any(hits)


def test_cross_paired_reference_has_foreign_background(moving_scene):
    for seed in range(10):
        ref = make_reference(moving_scene, 0, "cross_paired", seed=seed)
        assert ref.background != moving_scene.spec.background
        assert _outside_differs(ref, moving_scene.video[0])


def test_pose_enriched_mask_absent_from_video(moving_scene):
    ref = make_reference(moving_scene, 0, ReferenceMode.POSE_ENRICHED, seed=0)
    assert ref.pose_enriched and ref.scale == pytest.approx(1.2)
    for f in range(moving_scene.spec.frames):
        assert ref.mask.sum() != moving_scene.masks[f, 0].sum() or not any(
            np.array_equal(ref.mask, np.roll(np.roll(moving_scene.masks[f, 0], dy, 0), dx, 1))
            for dy in range(-32, 32)
            for dx in range(-32, 32)
        )


def test_reference_errors(moving_scene):
    with pytest.raises(SceneError, match="does not exist"):
        make_reference(moving_scene, 3, "cross_paired", seed=0)
    with pytest.raises(SceneError, match="exceeds"):
        make_reference(moving_scene, 0, "cross_paired", seed=0, ref_size=(40, 40))


# filters


def raster_iou(a, b):
    grid_a = np.zeros((40, 40), bool)
    grid_b = np.zeros((40, 40), bool)
    grid_a[a[1] : a[3], a[0] : a[2]] = True
    grid_b[b[1] : b[3], b[0] : b[2]] = True
    union = (grid_a | grid_b).sum()
    return (grid_a & grid_b).sum() / union if union else 0.0


def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 2, 2), (5, 5, 6, 6)) == 0.0
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert iou((1, 1, 1, 1), (2, 2, 2, 2)) == 0.0
    with pytest.raises(ValueError):
        iou((2, 0, 0, 2), (0, 0, 1, 1))


boxes = st.tuples(st.integers(0, 39), st.integers(0, 39), st.integers(0, 39), st.integers(0, 39)).map(
    lambda b: (min(b[0], b[2]), min(b[1], b[3]), max(b[0], b[2]), max(b[1], b[3]))
)


@settings(max_examples=200, deadline=None)
@given(boxes, boxes)
def test_iou_matches_rasterization(a, b):
    assert abs(iou(a, b) - raster_iou(a, b)) <= 1e-9


def _record(spec):
    r = render_scene(spec)
    return r.video, r.masks, r.boxes


def test_filter_verdicts():
    cfg = FilterConfig()
    ok = _record(scene(SubjectSpec("square", 0, 6.0, (16.0, 16.0)), background=3))
    assert filter_sample(*ok, cfg).accepted
    video, masks, bx = ok
    full = np.ones_like(masks)
    full_box = np.tile(np.array([0, 0, 32, 32]), (4, 1, 1))
    assert filter_sample(video, full, full_box, FilterConfig(max_area=0.8)).reason == "size"
    # a small sprite in front of a larger one: the back sprite stays visible all around it
    back = SubjectSpec("square", 0, 8.0, (16.0, 16.0))
    front = SubjectSpec("circle", 1, 4.0, (16.0, 16.0))
    assert filter_sample(*_record(scene(back, front)), cfg).reason == "iou"
    assert filter_sample(np.zeros_like(video), masks, bx, cfg).reason == "brightness"


def test_blur_sweep_is_monotone_and_crosses_threshold():
    video, masks, bx = _record(scene(SubjectSpec("diamond", 4, 7.0, (16.0, 16.0)), background=3))
    scores = []
    for sigma in [0.0, 0.5, 1.0, 2.0, 4.0]:
        blurred = np.stack([[gaussian_filter(ch.astype(float), sigma) for ch in f] for f in video]) if sigma else video.astype(float)
        scores.append(blur_score(np.clip(np.round(blurred), 0, 255).astype(np.uint8)))
    assert all(a > b for a, b in zip(scores, scores[1:]))
    cfg = FilterConfig(min_blur=(scores[2] + scores[3]) / 2)
    smooth = np.stack([[gaussian_filter(ch.astype(float), 4.0) for ch in f] for f in video]).round().astype(np.uint8)
    assert filter_sample(smooth, masks, bx, cfg).reason == "blur"


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(min_area=0.6, max_area=0.5)


# taxonomy


def test_taxonomy_examples():
    tax = Taxonomy({"animal": ("fox",)})
    assert match_taxonomy("a red fox jumps", tax) == [Match("animal", "fox", (6, 9))]
    assert match_taxonomy("foxglove blooms", tax) == []
    cars = Taxonomy({"vehicle": ("car",), "sport": ("sports car",)})
    assert match_taxonomy("a red sports car", cars) == [Match("sport", "sports car", (6, 16))]


def test_taxonomy_rejects_duplicate_synonyms():
    with pytest.raises(ValueError, match="appears in"):
        Taxonomy({"a": ("Box",), "b": ("box",)})


def brute_force(caption, taxonomy):
    """All word-bounded substrings equal to a synonym, then leftmost-longest non-overlapping selection."""
    low = caption.lower()
    table = taxonomy.lookup()
    word = re.compile(r"\w")

    def boundary(i):
        return i == 0 or i == len(low) or not (word.match(low[i - 1]) and word.match(low[i]))

    cands = [
        (i, j)
        for i in range(len(low))
        for j in range(i + 1, len(low) + 1)
        if low[i:j] in table and boundary(i) and boundary(j)
    ]
    out, pos = [], 0
    for i, j in sorted(cands, key=lambda c: (c[0], -c[1])):
        if i >= pos:
            out.append(Match(table[low[i:j]], low[i:j], (i, j)))
            pos = j
    return out


def random_caption(rng):
    words = ["a", "the", "red", "round", "sprite", "boxes", "box", "disc", "discs", "moving", "on", "block", "wedge", "lozenge", "sky"]
    syns = list(DEFAULT_TAXONOMY.lookup())
    parts = [str(rng.choice(words + syns)) for _ in range(rng.integers(1, 9))]
    parts = [p.upper() if rng.random() < 0.1 else p for p in parts]
    seps = [str(rng.choice([" ", " ", " ", ", ", "-"])) for _ in parts]
    return "".join(p + s for p, s in zip(parts, seps)).strip()


def test_taxonomy_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        cap = random_caption(rng)
        assert match_taxonomy(cap, DEFAULT_TAXONOMY) == brute_force(cap, DEFAULT_TAXONOMY), cap


# corpus


def test_mode_schedule_counts():
    modes = cp.mode_schedule(10, (0.5, 0.2, 0.3), 0)
    assert [modes.count(m) for m in cp.MODES] == [5, 2, 3]
    assert modes == cp.mode_schedule(10, (0.5, 0.2, 0.3), 0)


def test_corpus_acceptance_and_flags():
    recs, stats = cp.generate_records(64, (1, 0, 0), 0)
    assert stats["accepted"] / stats["generated"] > 0.9
    assert all(r.cross_paired for r in recs)
    for r in recs:
        assert all(ref.background != r.background for ref in r.refs)
        assert len(r.refs) == r.masks.shape[1]


def test_corpus_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        cp.build_corpus(tmp_path / name, 6, (0.5, 0.25, 0.25), 3, cp.SceneConfig(frames=2, resolution=(16, 16)))
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_corpus_roundtrip(tmp_path):
    cfg = cp.SceneConfig(frames=2, resolution=(16, 16))
    recs, _ = cp.generate_records(4, (0, 0, 1), 1, cfg)
    manifest = cp.build_corpus(tmp_path, 4, (0, 0, 1), 1, cfg)
    assert manifest["filter_stats"]["accepted"] == 4
    loaded = cp.load_records(tmp_path)
    for a, b in zip(recs, loaded):
        assert a.sample_id == b.sample_id and a.caption == b.caption and a.prompt_ids == b.prompt_ids
        np.testing.assert_array_equal(a.video, b.video)
        np.testing.assert_array_equal(a.masks, b.masks)
        assert [r.mode for r in a.refs] == [r.mode for r in b.refs]
        assert not b.cross_paired


def test_corpus_aborts_when_filters_reject_too_much():
    with pytest.raises(cp.CorpusError) as err:
        cp.generate_records(8, (1, 0, 0), 0, filters=FilterConfig(min_brightness=0.9, max_brightness=0.95))
    assert err.value.stats["rejected"]["brightness"] > 8
