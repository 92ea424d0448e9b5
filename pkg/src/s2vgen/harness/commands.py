"""The batch commands: synth, train, sample, eval and ablate.

Each command reads a validated RunConfig, writes its artifacts under an output
directory and records them in that directory's ``run_manifest.json``.
Artifacts are deterministic functions of (config, seeds); timings live only in
the manifest.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import dit
from .. import flowmatch as fm
from ..datasynth.corpus import build_corpus, load_manifest, load_records
from ..metrics import EXTRACTORS, MASK_SOURCES, MetricReport, score_sample
from ..numerics import stream_key
from ..rope import RopeVariant
from .checkpoint import file_sha256, git_blob_hash, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .tensorio import read_tensor_file, write_tensor_file

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "s2vgen.manifest/1"
VIDEOS_SCHEMA = "s2vgen.videos/1"
ABLATION_SCHEMA = "s2vgen.ablation/1"
LOSS_WINDOW = 50


class RunFailed(RuntimeError):
    """A command started but could not finish; its manifest records why."""


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _artifact(path: Path, root: Path) -> dict:
    return {"path": str(path.relative_to(root)), "sha256": file_sha256(path)}


class RunManifest:
    """``run_manifest.json`` in a run directory; each command fills in its own section."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / "run_manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"schema": MANIFEST_SCHEMA}
        self.data.setdefault("timings", {})

    def record(self, cfg: RunConfig, section: str, body: dict, seconds: float) -> None:
        self.data["config"] = _portable_snapshot(cfg)
        self.data[section] = body
        self.data["timings"][section] = round(seconds, 3)
        _dump(self.data, self.path)


def _portable_snapshot(cfg: RunConfig) -> dict:
    snap = cfg.snapshot()
    snap["dataset"]["path"] = str(cfg.dataset_dir.resolve())
    return snap


def verify_manifest(path) -> list[str]:
    """Re-hash every artifact a manifest references; returns the problems found."""
    path = Path(path)
    data = json.loads(path.read_text())
    problems = []

    def walk(node):
        if isinstance(node, dict):
            if "path" in node and "sha256" in node:
                f = path.parent / node["path"]
                if not f.exists():
                    problems.append(f"missing: {f}")
                elif file_sha256(f) != node["sha256"]:
                    problems.append(f"hash mismatch: {f}")
            for v in node.values():
                walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk({k: v for k, v in data.items() if k != "config"})
    ds = data.get("dataset")
    if ds and git_blob_hash(Path(ds["manifest"])) != ds["manifest_hash"]:
        problems.append(f"dataset manifest changed: {ds['manifest']}")
    return problems


def config_from_manifest(path) -> RunConfig:
    """Rebuild the exact config a run used, from its manifest alone."""
    data = json.loads(Path(path).read_text())
    if "config" not in data:
        raise ConfigError([f"{path}: no config snapshot"])
    return parse_config(data["config"], Path(path).parent)


def _dataset_ref(split_dir: Path) -> dict:
    m = split_dir / "manifest.json"
    return {"manifest": str(m.resolve()), "manifest_hash": git_blob_hash(m)}


def _split(cfg: RunConfig, name: str) -> Path:
    d = cfg.dataset_dir / name
    cfg.require_paths(d / "manifest.json")
    return d


# synth


def cmd_synth(cfg: RunConfig, out=None) -> dict:
    """Generate the training split and the held-out evaluation split."""
    root = Path(out) if out is not None else cfg.dataset_dir
    t0 = time.perf_counter()
    ds = cfg.dataset
    scene, filters = ds.scene.build(), ds.filters.build()
    train = build_corpus(root / "train", ds.count, ds.mix, ds.seed, scene, filters)
    held = build_corpus(root / "eval", ds.eval_count, ds.eval_mix, ds.eval_seed, scene, filters)
    body = {
        "train": {**_dataset_ref(root / "train"), "filter_stats": train["filter_stats"]},
        "eval": {**_dataset_ref(root / "eval"), "filter_stats": held["filter_stats"]},
    }
    manifest = {"schema": MANIFEST_SCHEMA, "config": _portable_snapshot(cfg), "synth": body}
    manifest["timings"] = {"synth": round(time.perf_counter() - t0, 3)}
    _dump(manifest, root / "synth_manifest.json")
    log.info("synth: %d train / %d eval samples in %s", ds.count, ds.eval_count, root)
    return body


# train


def final_loss(curve) -> float:
    """Mean training loss over the last ``LOSS_WINDOW`` steps."""
    tail = [v for _, v in curve[-LOSS_WINDOW:]]
    return float(np.mean(tail)) if tail else math.nan


def cmd_train(cfg: RunConfig, out, log_every: int = 100) -> dict:
    out = Path(out)
    split = _split(cfg, "train")
    manifest = RunManifest(out)
    t0 = time.perf_counter()
    config = cfg.dit
    records = load_records(split)
    examples = [fm.TrainExample.from_record(r, config) for r in records]
    params = dit.init_params(config, cfg.model.init_seed)
    train_cfg = cfg.training.build()
    curve: list[tuple[int, float]] = []

    def on_step(step, loss):
        curve.append((step, loss))
        if (step + 1) % log_every == 0:
            log.info("step %d/%d loss %.5f (mean of last %d: %.5f)", step + 1, train_cfg.total_steps, loss, LOSS_WINDOW, final_loss(curve))

    body = {"dataset": _dataset_ref(split), "steps": train_cfg.total_steps, "samples": len(records)}
    try:
        fm.train(params, config, examples, train_cfg, on_step)
    except fm.NonFiniteLossError as exc:
        body.update(status="failed", failed_step=exc.step, error=str(exc), loss_curve=curve)
        manifest.record(cfg, "train", body, time.perf_counter() - t0)
        raise RunFailed(f"training aborted at step {exc.step}: {exc}") from exc

    ckpt = save_checkpoint(params, config, out / "checkpoint.json")
    body.update(
        status="ok",
        loss_curve=curve,
        final_loss=final_loss(curve),
        checkpoint={"index": _artifact(ckpt, out), "payload": _artifact(ckpt.with_suffix(".bin"), out)},
    )
    manifest.data["dataset"] = body["dataset"]
    manifest.record(cfg, "train", body, time.perf_counter() - t0)
    log.info("train: final loss %.5f, checkpoint %s", body["final_loss"], ckpt)
    return body


# sample


def sample_seed(base: int, sample_id: str) -> int:
    return stream_key(base, "video", sample_id) % (2**63)


def _export_png(video_u8: np.ndarray, path: Path) -> None:
    from PIL import Image

    frames = np.concatenate([f.transpose(1, 2, 0) for f in video_u8], axis=1)
    Image.fromarray(frames, "RGB").save(path)


def cmd_sample(cfg: RunConfig, out, checkpoint=None, png: bool = False) -> dict:
    """Generate one video per held-out sample, conditioned on its references and prompt."""
    out = Path(out)
    split = _split(cfg, "eval")
    ckpt_path = Path(checkpoint) if checkpoint is not None else out / "checkpoint.json"
    cfg.require_paths(ckpt_path)
    manifest = RunManifest(out)
    t0 = time.perf_counter()
    params, config, _ = load_checkpoint(ckpt_path)
    sampler = cfg.sampler.build()
    vdir = out / "videos"
    entries = []
    for rec in load_records(split):
        seed = sample_seed(sampler.seed, rec.sample_id)
        refs = [fm.to_model_space(r.image, config.dtype) for r in rec.refs]
        try:
            x = fm.sample(params, config, refs, rec.prompt_ids, replace(sampler, seed=seed), rec.video.shape)
        except fm.NonFiniteStateError as exc:
            body = {"status": "failed", "sample": rec.sample_id, "failed_step": exc.step, "error": str(exc)}
            manifest.record(cfg, "sample", body, time.perf_counter() - t0)
            raise RunFailed(f"sampling {rec.sample_id} aborted: {exc}") from exc
        video = fm.to_pixels(x)
        rel = f"{rec.sample_id}/video.s2vt"
        write_tensor_file(video, vdir / rel)
        entry = {"id": rec.sample_id, "video": rel, "caption": rec.caption, "seed": seed}
        if png:
            _export_png(video, vdir / rec.sample_id / "frames.png")
            entry["png"] = f"{rec.sample_id}/frames.png"
        entries.append(entry)
    index = {
        "schema": VIDEOS_SCHEMA,
        "checkpoint_sha256": file_sha256(ckpt_path.with_suffix(".bin")),
        "sampler": {"steps": sampler.steps, "seed": sampler.seed, "guidance_scale": sampler.guidance_scale},
        "source": _dataset_ref(split)["manifest_hash"],
        "videos": entries,
    }
    _dump(index, vdir / "manifest.json")
    body = {"status": "ok", "videos": _artifact(vdir / "manifest.json", out), "count": len(entries)}
    manifest.record(cfg, "sample", body, time.perf_counter() - t0)
    log.info("sample: %d videos in %s", len(entries), vdir)
    return body


def load_videos(vdir) -> dict[str, np.ndarray]:
    vdir = Path(vdir)
    index = json.loads((vdir / "manifest.json").read_text())
    if index.get("schema") != VIDEOS_SCHEMA:
        raise ValueError(f"{vdir}: unsupported schema {index.get('schema')!r}")
    return {e["id"]: read_tensor_file(vdir / e["video"]) for e in index["videos"]}


# eval


def evaluate(videos: dict[str, np.ndarray], records, extractor_id: str, mask_source_id: str) -> MetricReport:
    extractor = EXTRACTORS[extractor_id]()
    masks = MASK_SOURCES[mask_source_id]()
    report = MetricReport(extractor.id, masks.id)
    for rec in records:
        if rec.sample_id not in videos:
            raise RunFailed(f"no generated video for {rec.sample_id}")
        report.samples.append(score_sample(videos[rec.sample_id], rec, extractor, masks))
    return report


def cmd_eval(cfg: RunConfig, out, videos=None) -> MetricReport:
    out = Path(out)
    split = _split(cfg, "eval")
    vdir = Path(videos) if videos is not None else out / "videos"
    cfg.require_paths(vdir / "manifest.json")
    manifest = RunManifest(out)
    t0 = time.perf_counter()
    report = evaluate(load_videos(vdir), load_records(split), cfg.metric.extractor, cfg.metric.mask_source)
    path = report.write(out / "metrics.json")
    body = {
        "status": "ok",
        "report": _artifact(path, out),
        "mean_consistency": report.mean_consistency,
        "mean_decoupling": report.mean_decoupling,
    }
    manifest.record(cfg, "eval", body, time.perf_counter() - t0)
    return report


# ablation

AXES = {
    "rope_variant": [v.value for v in (RopeVariant.CONCAT, RopeVariant.SHIFT_W, RopeVariant.SHIFT_H, RopeVariant.SHIFT_WH)],
    "cross_paired": ["w/ cross-paired", "w/o cross-paired"],
}
_MIXES = {"w/ cross-paired": (1.0, 0.0, 0.0), "w/o cross-paired": (0.0, 0.0, 1.0)}


def _derive(cfg: RunConfig, **changes) -> RunConfig:
    raw = cfg.snapshot()
    for key, value in changes.items():
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return parse_config(raw, cfg.base_dir)


def ablation_table(result: dict) -> str:
    lines = [f"{'variant':<18} {'S2V Consistency':>16} {'S2V Decoupling':>15}   per-seed consistency / decoupling"]
    for row in result["rows"]:
        per_seed = "  ".join(f"{s}:{c:.4f}/{d:.4f}" for s, c, d in zip(row["seeds"], row["consistency"], row["decoupling"]))
        lines.append(f"{row['variant']:<18} {row['median_consistency']:>16.4f} {row['median_decoupling']:>15.4f}   {per_seed}")
    return "\n".join(lines)


def _trend(axis: str, rows: dict) -> dict:
    better, worse = ("ShiftWH", "Concat") if axis == "rope_variant" else ("w/ cross-paired", "w/o cross-paired")
    if better not in rows or worse not in rows:
        return {}
    return {
        "comparison": f"{better} >= {worse}",
        "consistency": rows[better]["median_consistency"] >= rows[worse]["median_consistency"],
        "decoupling": rows[better]["median_decoupling"] >= rows[worse]["median_decoupling"],
    }


def _orderings(rows: list[dict], seeds) -> dict:
    out = {}
    for i, s in enumerate(seeds):
        out[str(s)] = {
            metric: [r["variant"] for r in sorted(rows, key=lambda r: -r[metric][i])]
            for metric in ("consistency", "decoupling")
        }
    return out


def cmd_ablate(cfg: RunConfig, axis: str, out, seeds=None) -> dict:
    """Train, sample and evaluate every arm of ``axis`` for each seed.

    The table is rewritten after every member run, so a failure leaves the
    finished runs on disk and in ``ablation.json`` (status "failed").
    """
    if axis not in AXES:
        raise ConfigError([f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}"])
    out = Path(out)
    seeds = list(seeds if seeds is not None else cfg.ablation.seeds)
    if len(seeds) < 3:
        raise ConfigError(["ablation needs at least 3 seeds"])
    arms = AXES[axis]
    result = {"schema": ABLATION_SCHEMA, "axis": axis, "seeds": seeds, "status": "running", "runs": {}, "rows": []}

    def arm_config(arm: str, seed: int) -> RunConfig:
        data = out / "data" if axis == "rope_variant" else out / ("data_cross" if arm.startswith("w/ ") else "data_naive")
        changes = {"dataset.path": str(data.resolve()), "training.seed": seed, "model.init_seed": seed, "sampler.seed": seed}
        if axis == "rope_variant":
            changes["variant"] = arm
        else:
            changes["dataset.mix"] = list(_MIXES[arm])
        return _derive(cfg, **changes)

    def publish():
        rows = []
        for arm in arms:
            done = [result["runs"][arm][str(s)] for s in seeds if str(s) in result["runs"].get(arm, {})]
            if len(done) == len(seeds):
                cons, dec = [d["consistency"] for d in done], [d["decoupling"] for d in done]
                rows.append(
                    {"variant": arm, "seeds": seeds, "consistency": cons, "decoupling": dec,
                     "median_consistency": float(np.median(cons)), "median_decoupling": float(np.median(dec))}
                )
        result["rows"] = rows
        result["trend"] = _trend(axis, {r["variant"]: r for r in rows})
        result["orderings"] = _orderings(rows, seeds) if rows else {}
        _dump(result, out / "ablation.json")

    t0 = time.perf_counter()
    try:
        synthesized = set()
        for arm in arms:
            for seed in seeds:
                run_cfg = arm_config(arm, seed)
                if run_cfg.dataset_dir not in synthesized:
                    cmd_synth(run_cfg)
                    synthesized.add(run_cfg.dataset_dir)
                run_dir = out / "runs" / arm.replace("/", "").replace(" ", "_") / f"seed{seed}"
                log.info("ablate %s: %s seed %d", axis, arm, seed)
                cmd_train(run_cfg, run_dir)
                cmd_sample(run_cfg, run_dir)
                report = cmd_eval(run_cfg, run_dir)
                result["runs"].setdefault(arm, {})[str(seed)] = {
                    "run_dir": str(run_dir.relative_to(out)),
                    "consistency": report.mean_consistency,
                    "decoupling": report.mean_decoupling,
                }
                publish()
    except Exception as exc:
        result["status"] = "failed"
        result["error"] = f"{type(exc).__name__}: {exc}"
        publish()
        raise RunFailed(f"ablation aborted: {exc}; partial results in {out / 'ablation.json'}") from exc
    result["status"] = "ok"
    result["seconds"] = round(time.perf_counter() - t0, 1)
    publish()
    (out / "ablation.txt").write_text(ablation_table(result) + "\n")
    return result
