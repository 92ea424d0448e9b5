"""The acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the lines are collected again in
the terminal summary. The ablation criterion trains 18 small models and takes
most of the suite's time budget.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from conftest import record_criterion, record_section, tiny_config
from test_datasynth import brute_force, random_caption, raster_iou
from s2vgen import dit
from s2vgen import flowmatch as fm
from s2vgen import metrics as mt
from s2vgen import numerics as nx
from s2vgen.datasynth import corpus as cp
from s2vgen.datasynth.filters import blur_score, iou
from s2vgen.datasynth.scene import background_texture
from s2vgen.datasynth.taxonomy import DEFAULT_TAXONOMY, match_taxonomy
from s2vgen.harness import cli, commands
from s2vgen.harness.config import load_config
from s2vgen.rope import RopeConfig, RopeVariant, SequenceGeometry, apply_rope, assemble_positions

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def check(number, name, ok, detail=""):
    record_criterion(number, name, bool(ok), detail)
    assert ok, detail


def test_criterion_01_rope_relative_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n, hd = 1000, 32
    cfg = RopeConfig(hd)
    q, k = rng.standard_normal((n, 1, hd)), rng.standard_normal((n, 1, hd))
    p, pk, d = (rng.integers(0, 64, size=(n, 3)) for _ in range(3))

    def dots(pq, pk_):
        return np.sum(apply_rope(q, pq, cfg).data * apply_rope(k, pk_, cfg).data, axis=(1, 2))

    a, b = dots(p, pk), dots(p + d, pk + d)
    rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    elapsed = time.perf_counter() - t0
    check(1, "RoPE relative-position invariance", rel.max() < 1e-5 and elapsed < 10, f"max rel err {rel.max():.2e}, {elapsed:.2f}s")


def test_criterion_02_position_disjointness():
    rng = np.random.default_rng(2)
    bad = []
    for i in range(500):
        T, H, W = (int(v) for v in rng.integers(1, 17, size=3))
        refs = tuple((int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1))) for _ in range(rng.integers(0, 4)))
        g = SequenceGeometry((T, H, W), refs)
        n = g.n_ref_tokens
        pos = assemble_positions(g, RopeVariant.SHIFT_WH)
        if {tuple(x) for x in pos[:n]} & {tuple(x) for x in pos[n:]}:
            bad.append((i, "ShiftWH overlap"))
        if refs:
            cpos = assemble_positions(g, RopeVariant.CONCAT)
            if not {tuple(x[1:]) for x in cpos[:n]} & {tuple(x[1:]) for x in cpos[n:]}:
                bad.append((i, "Concat disjoint"))
    check(2, "position disjointness (ShiftWH) / overlap (Concat)", not bad, f"500 geometries, {len(bad)} violations")


def test_criterion_03_gradient_correctness():
    t0 = time.perf_counter()
    cfg = dit.DiTConfig(model_dim=16, depth=2, heads=2, head_dim=8, text_dim=8, precision="double")
    recs, _ = cp.generate_records(8, (1, 0, 0), 0, cp.SceneConfig(frames=2, resolution=(16, 16)))
    rec = next(r for r in recs if len(r.refs) == 2)
    ex = fm.TrainExample.from_record(rec, cfg)
    params = dit.init_params(cfg, 0)
    # fill the zero-initialized projections so every parameter carries gradient
    rng = np.random.default_rng(0)
    for p in params.params.values():
        p += 0.3 * rng.standard_normal(p.shape)
    t, eps = fm.draw(0, 0, ex.key, ex.x0.tokens.shape, np.float64)
    x_t = fm.interpolate(ex.x0.tokens, eps, t)
    target = fm.target_velocity(ex.x0.tokens, eps)
    model = fm.dit_velocity(cfg)
    report = nx.grad_check(lambda P: nx.mean(nx.square(model(ex, x_t, t, P) - target)), params, step=1e-5, tolerance=1e-4)
    elapsed = time.perf_counter() - t0
    detail = f"{params.count()} entries, worst rel err {report.worst:.2e}, failures {report.failures}, {elapsed:.0f}s"
    check(3, "gradient correctness", report.passed and elapsed < 120, detail)


def test_criterion_04_sampler_exactness():
    cfg = dit.DiTConfig(model_dim=16, depth=1, heads=2, head_dim=8, text_dim=8, precision="double")
    shape = (4, 3, 16, 16)
    x0_pixels = np.random.default_rng(4).uniform(-1, 1, shape)
    x0 = dit.video_patches(x0_pixels, cfg).tokens
    errors = {}
    for steps in (1, 4, 100):
        eps = fm.initial_noise(x0.shape, 11, np.float64)
        out = fm.sample(None, cfg, [], [1], fm.SamplerConfig(steps=steps, seed=11), shape, velocity_fn=lambda x, t: eps - x0)
        errors[steps] = float(np.max(np.abs(out - x0_pixels)))
    check(4, "sampler exactness under oracle velocity", max(errors.values()) < 1e-6, f"max abs err by steps {errors}")


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit")
    cfg = load_config(CONFIGS / "overfit.json", {"dataset.path": str(out / "data")})
    commands.cmd_synth(cfg)
    t0 = time.perf_counter()
    body = commands.cmd_train(cfg, out / "run")
    return cfg, body, time.perf_counter() - t0


def test_criterion_05_overfit(overfit_run):
    cfg, body, elapsed = overfit_run
    assert cfg.dit == dit.DiTConfig() and cfg.dataset.count == 4
    loss = body["final_loss"]
    detail = f"{body['steps']} steps, final loss (mean of last 50 steps) {loss:.4f}, target < 0.01, {elapsed:.0f}s"
    check(5, "overfit 4-sample corpus", loss < 0.01 and body["steps"] <= 2000 and elapsed < 600, detail)


def test_overfit_smoothed_loss_is_monotone(overfit_run):
    _, body, _ = overfit_run
    values = [v for _, v in body["loss_curve"]]
    windows = [float(np.mean(values[i : i + 50])) for i in range(0, len(values) - 49, 50)]
    rises = [i for i in range(1, len(windows)) if windows[i] >= windows[i - 1]]
    check("5a", "overfit loss decreases across 50-step windows", not rises, f"{len(rises)} of {len(windows) - 1} windows rose")


def test_criterion_06_metric_fixed_points():
    recs, _ = cp.generate_records(1, (1, 0, 0), 6)
    ref = recs[0].refs[0]
    video = np.repeat(ref.image[None], 4, axis=0)
    masks = np.repeat(ref.mask[None], 4, axis=0)
    consistency = mt.s2v_consistency(video, masks, [(ref.image, ref.mask)])
    decoupling = mt.s2v_decoupling(video, masks, [(ref.image, ref.mask)])
    ref_bg, foreign = background_texture(0, 16, 16), background_texture(4, 16, 16)
    box = np.zeros((16, 16), bool)
    box[5:11, 5:11] = True
    triplet = []
    for rows in (0, 8, 16):
        frame = ref_bg.copy()
        frame[:, :rows] = foreign[:, :rows]
        triplet.append(mt.s2v_decoupling(frame[None], box[None], [(ref_bg, box)]))
    ok = abs(consistency - 1) <= 1e-6 and abs(decoupling) <= 1e-6 and triplet[0] < triplet[1] < triplet[2]
    check(6, "metric fixed points", ok, f"consistency {consistency:.9f}, decoupling {decoupling:.1e}, triplet {np.round(triplet, 4).tolist()}")


def test_criterion_07_filter_oracles():
    rng = np.random.default_rng(7)

    def box():
        (x0, x1), (y0, y1) = np.sort(rng.integers(0, 40, (2, 2)), axis=1).tolist()
        return (x0, y0, x1, y1)

    worst = 0.0
    for _ in range(1000):
        a, b = box(), box()
        worst = max(worst, abs(iou(a, b) - raster_iou(a, b)))

    recs, _ = cp.generate_records(1, (1, 0, 0), 7)
    video = recs[0].video
    scores = []
    for sigma in (0.0, 0.5, 1.0, 2.0, 4.0):
        blurred = np.stack([[gaussian_filter(ch.astype(float), sigma) for ch in f] for f in video]) if sigma else video
        scores.append(blur_score(np.clip(np.round(blurred), 0, 255).astype(np.uint8)))
    blur_ok = all(x > y for x, y in zip(scores, scores[1:]))

    mismatches = 0
    for _ in range(1000):
        cap = random_caption(rng)
        mismatches += match_taxonomy(cap, DEFAULT_TAXONOMY) != brute_force(cap, DEFAULT_TAXONOMY)
    ok = worst <= 1e-9 and blur_ok and mismatches == 0
    check(7, "filter oracles", ok, f"iou worst {worst:.1e}, blur sweep {np.round(scores, 5).tolist()}, taxonomy mismatches {mismatches}")


def test_criterion_08_cross_paired_guarantee():
    recs, stats = cp.generate_records(256, (1, 0, 0), 8)
    failures = 0
    for r in recs:
        frames, _, H, W = r.video.shape
        video_bg = background_texture(r.background, H, W)
        for ref in r.refs:
            outside = ~ref.mask
            if np.array_equal(ref.image[:, outside], video_bg[:, outside]):
                failures += 1
                continue
            # also against every frame, where both images show background
            for f in range(frames):
                shared = outside & ~r.masks[f].any(axis=0)
                if shared.any() and np.array_equal(ref.image[:, shared], r.video[f][:, shared]):
                    failures += 1
                    break
    ok = len(recs) == 256 and failures == 0
    check(8, "cross-paired reference backgrounds differ", ok, f"{len(recs)} accepted of {stats['generated']}, {failures} failures")


@pytest.mark.parametrize("axis", ["rope_variant", "cross_paired"])
def test_criterion_09_ablation(axis, tmp_path_factory):
    cfg = load_config(CONFIGS / "ablation.json")
    out = tmp_path_factory.mktemp(f"ablation_{axis}")
    result = commands.cmd_ablate(cfg, axis, out)
    arms = commands.AXES[axis]
    rows = result["rows"]
    table_ok = (
        result["status"] == "ok"
        and [r["variant"] for r in rows] == arms
        and all(len(r["consistency"]) == len(r["decoupling"]) == len(result["seeds"]) >= 3 for r in rows)
        and all(np.isfinite(r["median_consistency"]) and np.isfinite(r["median_decoupling"]) for r in rows)
        and (out / "ablation.txt").exists()
    )
    trend = result["trend"]
    finding = f"trend {trend['comparison']}: consistency {trend['consistency']}, decoupling {trend['decoupling']}"
    record_section(f"ablation {axis} ({result['seconds']:.0f}s)", commands.ablation_table(result) + "\n" + finding)
    check(9, f"ablation table produced ({axis})", table_ok, finding)


def test_criterion_10_reproducibility(tmp_path):
    trees = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        (root / "run.json").write_text(json.dumps(tiny_config(steps=20)))
        config, run = str(root / "run.json"), str(root / "run")
        assert cli.main(["synth", "--config", config]) == 0
        for command in ("train", "sample", "eval"):
            assert cli.main([command, "--config", config, "--out", run]) == 0
        files = {}
        for sub in ("data/train", "data/eval", "run"):
            for p in sorted((root / sub).rglob("*")):
                if p.is_file() and p.name != "run_manifest.json":
                    files[str(p.relative_to(root))] = p.read_bytes()
        trees.append(files)
    a, b = trees
    differing = [k for k in a if a[k] != b.get(k)]
    kinds = {k.split("/")[-1] for k in a}
    covered = {"checkpoint.bin", "checkpoint.json", "video.s2vt", "metrics.json", "manifest.json"} <= kinds
    ok = set(a) == set(b) and not differing and covered
    check(10, "byte-identical end-to-end reruns", ok, f"{len(a)} files compared, {len(differing)} differ")
