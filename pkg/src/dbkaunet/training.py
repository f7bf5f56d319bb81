"""Epoch loop with validation, best-F1 checkpointing and early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .core.tensor import Tensor, no_grad
from .data import (
    augment, compute_metrics, extract_patch_set, load_dataset, preprocess, synth_dataset, worker_seed,
)
from .network import AdamW, DBKAUNet, NetworkConfig, cosine_lr, train_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_f1", "lr")
# seed streams, disjoint from the per-epoch streams 1..epochs
SPLIT_STREAM = 1 << 21


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_f1: float = float("-inf")
    best_epoch: int = -1
    stopped_early: bool = False
    checkpoint: Path | None = None
    model: DBKAUNet | None = None


def build_model(cfg: TrainConfig) -> DBKAUNet:
    net_cfg = NetworkConfig.ablation(cfg.ablation, base_channels=cfg.base_channels)
    model = DBKAUNet(net_cfg, seed=cfg.seed)
    if cfg.precision == "float32":
        model.to(np.float32)
    return model


def training_images(cfg: TrainConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(image, mask)`` pairs; synthetic images skip preprocessing."""
    if cfg.synthetic:
        return [(img, mask) for img, mask, _ in
                synth_dataset(cfg.synth_train_images, cfg.synth_image_size, cfg.seed)]
    samples = load_dataset(cfg.data_source, cfg.layout)
    tiles = (cfg.clahe_tiles, cfg.clahe_tiles)
    return [(preprocess(s, tiles, cfg.clahe_clip, cfg.gamma)[0], s.vessel_mask) for s in samples]


def split_patches(patches, val_fraction: float, seed: int):
    order = np.random.default_rng(worker_seed(seed, SPLIT_STREAM)).permutation(len(patches))
    n_val = int(round(val_fraction * len(patches)))
    val = [patches[i] for i in order[:n_val]]
    train = [patches[i] for i in order[n_val:]]
    return train, val


def predict_patches(model: DBKAUNet, images: np.ndarray, batch: int = 25) -> np.ndarray:
    dtype = model.parameters()[0].dtype
    model.eval()
    outs = []
    with no_grad():
        for i in range(0, len(images), batch):
            outs.append(model(Tensor(images[i:i + batch, None].astype(dtype))).data)
    model.train()
    return np.concatenate(outs)


def validate(model: DBKAUNet, val, threshold: float, batch: int = 25) -> float:
    """F1 pooled over all validation patch pixels."""
    if not val:
        return float("nan")
    images = np.stack([p for p, _ in val])
    masks = np.stack([m for _, m in val])
    return compute_metrics(predict_patches(model, images, batch), masks, None, threshold).f1


def train(cfg: TrainConfig, out_dir, model: DBKAUNet | None = None, images=None,
          on_step=None, max_steps: int | None = None) -> TrainResult:
    """Run the training protocol and write ``train_log.csv`` and ``best.ckpt`` to ``out_dir``.

    ``on_step(step, model, step_result)`` is called after every optimizer
    step.  ``max_steps`` stops early without changing the learning-rate
    schedule, so a truncated run replays a prefix of the full one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model or build_model(cfg)
    images = images if images is not None else training_images(cfg)
    patches = extract_patch_set(images, cfg.patch_count, cfg.patch_size, cfg.seed)
    train_set, val_set = split_patches(patches, cfg.val_fraction, cfg.seed)
    if not train_set:
        raise ValueError("no training patches")
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = -(-len(train_set) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    dtype = model.parameters()[0].dtype

    result = TrainResult(model=model)
    log_path = out / "train_log.csv"
    ckpt_path = out / "best.ckpt"
    since_best = 0
    step = 0
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for epoch in range(1, cfg.epochs + 1):
            rng = np.random.default_rng(worker_seed(cfg.seed, epoch))
            order = rng.permutation(len(train_set))
            losses = []
            t0 = time.time()
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                pairs = [train_set[i] for i in idx]
                if cfg.augment:
                    pairs = [augment(p, m, rng) for p, m in pairs]
                x = np.stack([p for p, _ in pairs])[:, None].astype(dtype)
                y = np.stack([m for _, m in pairs]).astype(dtype)
                lr = cosine_lr(step, total_steps, cfg.lr)
                res = train_step(model, (x, y), opt, lr, cfg.alpha, cfg.clip_norm)
                losses.append(res.loss)
                step += 1
                if on_step is not None:
                    on_step(step, model, res)
                if max_steps is not None and step >= max_steps:
                    result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                                           "val_f1": float("nan"), "lr": lr})
                    return result
            val_f1 = validate(model, val_set, cfg.threshold, cfg.eval_batch)
            row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_f1": val_f1, "lr": lr}
            result.history.append(row)
            writer.writerow([row[k] for k in LOG_FIELDS])
            fh.flush()
            log.info("epoch %d loss %.4f val_f1 %.4f (%.0fs)", epoch, row["train_loss"], val_f1, time.time() - t0)
            score = val_f1 if np.isfinite(val_f1) else -row["train_loss"]
            if score > result.best_f1:
                result.best_f1, result.best_epoch = score, epoch
                since_best = 0
                save_checkpoint(ckpt_path, model, opt, seed=cfg.seed, epoch=epoch, best_f1=score, step=step)
                result.checkpoint = ckpt_path
            else:
                since_best += 1
                if since_best >= cfg.patience and epoch < cfg.epochs:
                    writer.writerow(["early-stop", epoch, "", ""])
                    result.stopped_early = True
                    break
    return result
