"""Command-line entry point: ``dbkaunet {train,eval,infer,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, CheckpointMismatchError, load_checkpoint
from .config import ConfigError, TrainConfig, load_config
from .core.tensor import NonFiniteError
from .data import (
    DataError, compute_metrics, load_dataset, mean_report, model_predictor, preprocess, read_image,
    sliding_window_infer, synth_dataset, to_uint16, worker_seed, write_image,
)
from .data.metrics import CSV_FIELDS
from .gradsuite import run_suite

log = logging.getLogger("dbkaunet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

HELDOUT_STREAM = 1 << 20


def heldout_images(cfg: TrainConfig):
    """Synthetic evaluation images drawn from a stream disjoint from training."""
    return synth_dataset(cfg.synth_eval_images, cfg.synth_image_size, worker_seed(cfg.seed, HELDOUT_STREAM))


def resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {}
    for key in ("seed", "threshold", "stride", "ablation"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.update(**overrides)


def write_effective_config(out_dir: Path, cfg: TrainConfig, command: str, **extra) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"# effective configuration for '{command}'", cfg.dump().rstrip()]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path = out_dir / f"{command}_config.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def evaluate(predict, samples, out_dir: Path, threshold: float, stride: int, patch: int) -> dict:
    """Per-image and mean metrics as JSON lines (``metrics.jsonl``) and CSV (``metrics.csv``).

    ``samples`` yields ``(source_id, image, vessel_mask, fov_mask)``.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    with open(out_dir / "metrics.jsonl", "w") as jf, open(out_dir / "metrics.csv", "w", newline="") as cf:
        writer = csv.writer(cf)
        writer.writerow(("image",) + CSV_FIELDS)
        for source_id, image, vessel, fov in samples:
            prob, counts = sliding_window_infer(predict, image, stride, patch, return_counts=True)
            rep = compute_metrics(prob, vessel, fov, threshold)
            reports.append(rep)
            line = rep.to_json(image=source_id, stride=stride, coverage_min=int(counts.min()),
                               coverage_max=int(counts.max()))
            jf.write(line + "\n")
            print(line)
            writer.writerow([source_id] + rep.csv_row())
        summary = mean_report(reports)
        jf.write(json.dumps({"image": "mean", **summary}) + "\n")
        writer.writerow(["mean"] + [summary[f] for f in CSV_FIELDS])
    print(json.dumps({"image": "mean", **summary}))
    return summary


def _eval_samples(data_dir: str, cfg: TrainConfig):
    if data_dir == "synthetic":
        for i, (img, mask, fov) in enumerate(heldout_images(cfg)):
            yield f"synth{i:03d}", img, mask, fov
        return
    tiles = (cfg.clahe_tiles, cfg.clahe_tiles)
    for s in load_dataset(data_dir, cfg.layout):
        yield s.source_id, preprocess(s, tiles, cfg.clahe_clip, cfg.gamma)[0], s.vessel_mask, s.fov_mask


def cmd_train(args) -> int:
    from .training import train

    cfg = resolve_config(args)
    out = Path(args.out_dir)
    write_effective_config(out, cfg, "train")
    result = train(cfg, out)
    summary = {"best_f1": result.best_f1, "best_epoch": result.best_epoch,
               "epochs_run": len(result.history), "stopped_early": result.stopped_early,
               "checkpoint": str(result.checkpoint) if result.checkpoint else None}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    model, _ = load_checkpoint(args.checkpoint)
    write_effective_config(out, cfg, "eval", checkpoint=args.checkpoint, data_dir=args.data_dir)
    evaluate(model_predictor(model, cfg.eval_batch), _eval_samples(args.data_dir, cfg), out,
             cfg.threshold, cfg.stride, cfg.patch_size)
    return EXIT_OK


def load_input_image(path, cfg: TrainConfig) -> np.ndarray:
    """RGB files go through full preprocessing; grayscale files are used as intensities in [0, 1]."""
    arr = read_image(path)
    if arr.ndim == 3:
        rgb = np.ascontiguousarray(arr[..., :3].transpose(2, 0, 1))
        if rgb.dtype != np.uint8:
            raise DataError(f"{path}: RGB input must be 8-bit")
        return preprocess(rgb, (cfg.clahe_tiles, cfg.clahe_tiles), cfg.clahe_clip, cfg.gamma)[0]
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return arr.astype(np.float64) / scale


def cmd_infer(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    model, _ = load_checkpoint(args.checkpoint)
    write_effective_config(out, cfg, "infer", checkpoint=args.checkpoint, image=args.image)
    image = load_input_image(args.image, cfg)
    prob = sliding_window_infer(model_predictor(model, cfg.eval_batch), image, cfg.stride, cfg.patch_size)
    q = to_uint16(prob)
    mask = (q.astype(np.float64) / 65535.0 >= cfg.threshold).astype(np.uint8) * np.uint8(255)
    stem = Path(args.image).stem
    p1 = write_image(out / f"{stem}_prob.png", q)
    p2 = write_image(out / f"{stem}_mask.png", mask)
    print(json.dumps({"prob_map": str(p1), "mask": str(p2), "shape": list(prob.shape)}))
    return EXIT_OK


def cmd_gradcheck(args, registry=None) -> int:
    failed = []

    def report(res):
        status = "ok" if res.passed else "FAIL"
        detail = f" ({res.error})" if res.error else ""
        print(f"{res.name:24s} {res.kind:9s} max_rel_err={res.max_error:.3e} tol={res.tol:.0e} "
              f"{res.seconds:6.2f}s {status}{detail}", flush=True)
        if not res.passed:
            failed.append(res.name)

    run_suite(registry, seed=args.seed or 0, report=report)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("gradcheck passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbkaunet", description="Retinal vessel segmentation network.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threshold", type=float)
        p.add_argument("--stride", type=int)
        p.add_argument("--ablation", choices=list("ABCDEFGH"))
        p.add_argument("--out-dir", default=out_default)

    p = sub.add_parser("train", help="train with early stopping, keep the best-F1 checkpoint")
    common(p, "runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sliding-window metrics for a dataset directory or 'synthetic'")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    common(p, "runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="probability map and binary mask for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    common(p, "runs/infer")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
