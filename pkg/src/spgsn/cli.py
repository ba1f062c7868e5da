"""Command-line entry point: ``spgsn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ._fileio import atomic_write
from .config import load_configs
from .diagnostics import inspect_spectrum, model_gradcheck
from .motion_io import MOTIFS, DatasetManifest, format_clip, gen_synthetic, load_clip, load_dataset, ms_to_frames
from .network import load_checkpoint, param_count, predict
from .training import evaluate, train

GRADCHECK_TOL = 1e-3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spgsn", description="Skeleton-parted graph scattering motion predictor")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a manifest and config")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines metrics log path")

    p = sub.add_parser("predict", help="predict future frames for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--root", type=int, default=0, help="root joint used for centering")
    p.add_argument("--pre-centered", action="store_true", help="skip root centering")

    p = sub.add_parser("eval", help="MPJPE per horizon over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--horizons", type=_int_list, help="1-based frame indices, e.g. 2,4,8")
    group.add_argument("--horizons-ms", type=_float_list, help="milliseconds, mapped with the manifest frame rate")
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--json-out", help="also write the table as JSON")

    p = sub.add_parser("gradcheck", help="finite-difference check of a fresh model")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None, help="probe at most this many entries per tensor")
    p.add_argument("--samples", type=int, default=2)

    p = sub.add_parser("inspect-spectrum", help="dump scattering responses and importance scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--block", type=int, default=-1, help="block index (default: last)")
    p.add_argument("--out", required=True, help="CSV path for node responses")
    p.add_argument("--root", type=int, default=0)
    p.add_argument("--pre-centered", action="store_true")

    p = sub.add_parser("gen-data", help="write a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--joints", type=int, default=4)
    p.add_argument("--motif", choices=MOTIFS, default="sinusoid-limbs")
    p.add_argument("--frame-rate", type=float, default=25.0)

    p = sub.add_parser("param-count", help="print the number of trainable scalars")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest")
    return parser


def _history_from_clip(path, cfg, root, pre_centered) -> np.ndarray:
    clip = load_clip(path, root=None if pre_centered else root)
    if clip.n_frames < cfg.history:
        raise ValueError(f"{path}: clip has {clip.n_frames} frames, model needs {cfg.history}")
    if clip.n_joints != cfg.joints:
        raise ValueError(f"{path}: clip has {clip.n_joints} joints, model expects {cfg.joints}")
    return clip.frames[-cfg.history:]


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    cfg, tcfg = load_configs(args.config, manifest)
    data = load_dataset(manifest, cfg.history, cfg.horizon, tcfg.stride)
    tr, va = data.split(tcfg.train_fraction)
    result = train(tr, cfg, tcfg, val_data=va, checkpoint=args.out, log_path=args.log)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"epochs": len(result.log), "train_loss": last.get("train_loss"), "checkpoint": args.out}))
    return 0


def cmd_predict(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    hist = _history_from_clip(args.clip, cfg, args.root, args.pre_centered)
    atomic_write(args.out, format_clip(predict(hist, params, cfg)))
    return 0


def cmd_eval(args) -> int:
    params, cfg, meta = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    fr = manifest.effective_frame_rate
    if args.horizons is not None:
        frames = args.horizons
        ms = [1000.0 * f / fr for f in frames]
    else:
        ms = args.horizons_ms
        frames = [ms_to_frames(v, fr) for v in ms]
    data = load_dataset(manifest, cfg.history, cfg.horizon, args.stride)
    if args.split != "all":
        fraction = meta.get("train", {}).get("train_fraction", 0.8)
        tr, va = data.split(fraction)
        data = tr if args.split == "train" else va
    if len(data) == 0:
        raise ValueError("no evaluation windows in the selected data")
    table = evaluate(params, cfg, data, frames)
    print(f"{'frame':>6} {'ms':>8} {'mpjpe':>14}")
    for f, m in zip(frames, ms):
        print(f"{f:>6d} {m:>8.1f} {table[f]:>14.6g}")
    if args.json_out:
        rows = [{"frame": f, "ms": m, "mpjpe": table[f]} for f, m in zip(frames, ms)]
        atomic_write(args.json_out, json.dumps({"unit": manifest.unit, "n_samples": len(data), "rows": rows}, indent=2) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    cfg, tcfg = load_configs(args.config)
    report = model_gradcheck(cfg, seed=tcfg.seed, n_samples=args.samples, eps=args.eps, max_entries=args.max_entries)
    for name, err in report.per_param.items():
        print(f"{name:40s} {err:.3e}")
    ok = report.passed(GRADCHECK_TOL)
    print(f"max relative error {report.max_rel_err:.3e} over {report.n_checked} entries: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_inspect(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    hist = _history_from_clip(args.clip, cfg, args.root, args.pre_centered)
    block = args.block % cfg.blocks
    out = inspect_spectrum(params, cfg, hist, block, csv_path=args.out)
    print(json.dumps({"block": block, **out}))
    return 0


def cmd_gen_data(args) -> int:
    manifest = gen_synthetic(args.out, seed=args.seed, n_clips=args.clips, n_frames=args.frames,
                             n_joints=args.joints, motif=args.motif, frame_rate=args.frame_rate)
    print(f"wrote {len(manifest.clips)} clips to {args.out}")
    return 0


def cmd_param_count(args) -> int:
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    cfg, _ = load_configs(args.config, manifest)
    print(param_count(cfg))
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect-spectrum": cmd_inspect,
    "gen-data": cmd_gen_data,
    "param-count": cmd_param_count,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"spgsn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
