"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (config, arguments, missing paths),
3 a run that started and failed (non-finite values, corrupt artifacts, I/O).
``S2V_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from ..datasynth.corpus import CorpusError
from .checkpoint import CheckpointError
from .commands import AXES, RunFailed, ablation_table, cmd_ablate, cmd_eval, cmd_sample, cmd_synth, cmd_train
from .config import ConfigError, default_config, load_config, parse_config, set_dotted
from .tensorio import TensorFileError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
THREADS_ENV = "S2V_THREADS"

# per command, the config key that --seed overrides
SEED_KEYS = {
    "synth": "dataset.seed",
    "train": "training.seed",
    "sample": "sampler.seed",
    "eval": None,
    "ablate": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2v", description="Subject-to-video toy pipeline: data, training, sampling, metrics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="run config (JSON), or a run manifest to replay")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override this command's seed")
        p.add_argument("--variant", help="override the rope variant (Concat, ShiftW, ShiftH, ShiftWH)")
        return p

    common(sub.add_parser("synth", help="generate training and evaluation datasets"), out_required=False)
    common(sub.add_parser("train", help="train a model and write a checkpoint"))
    p = common(sub.add_parser("sample", help="generate videos for the evaluation split"))
    p.add_argument("--checkpoint", help="checkpoint index (default: <out>/checkpoint.json)")
    p.add_argument("--png", action="store_true", help="also write a frame strip per video")
    p = common(sub.add_parser("eval", help="score generated videos"))
    p.add_argument("--videos", help="videos directory (default: <out>/videos)")
    p = common(sub.add_parser("ablate", help="run an ablation and print the comparison table"))
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--seeds", type=int, nargs="+", help="seed list (at least 3)")
    p = sub.add_parser("init", help="write a starter config")
    p.add_argument("--out", required=True, help="config file to write")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load(args):
    overrides = {}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    key = SEED_KEYS.get(args.command)
    if args.seed is not None and key:
        overrides[key] = args.seed
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        raw = None
    if isinstance(raw, dict) and "config" in raw and raw.get("schema", "").startswith("s2vgen.manifest"):
        snap = raw["config"]
        for k, v in overrides.items():
            set_dotted(snap, k, v)
        return parse_config(snap, path.parent)
    return load_config(path, overrides)


def _threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError([f"{THREADS_ENV} must be a positive integer, got {value!r}"]) from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(args) -> int:
    if args.command == "init":
        Path(args.out).write_text(json.dumps(default_config(seed=args.seed), indent=1) + "\n")
        print(args.out)
        return EXIT_OK
    cfg = _load(args)
    with _threads():
        if args.command == "synth":
            body = cmd_synth(cfg, args.out)
            for split in ("train", "eval"):
                print(f"{split}: {body[split]['manifest']}")
        elif args.command == "train":
            body = cmd_train(cfg, args.out)
            print(f"final loss {body['final_loss']:.6f}  checkpoint {Path(args.out) / 'checkpoint.json'}")
        elif args.command == "sample":
            body = cmd_sample(cfg, args.out, args.checkpoint, args.png)
            print(f"{body['count']} videos in {Path(args.out) / 'videos'}")
        elif args.command == "eval":
            report = cmd_eval(cfg, args.out, args.videos)
            print(f"extractor {report.extractor}, masks {report.mask_source}")
            print(report.table())
        elif args.command == "ablate":
            result = cmd_ablate(cfg, args.axis, args.out, args.seeds)
            print(ablation_table(result))
            if result.get("trend"):
                t = result["trend"]
                print(f"trend {t['comparison']}: consistency {t['consistency']}, decoupling {t['decoupling']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RunFailed, CorpusError, CheckpointError, TensorFileError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
