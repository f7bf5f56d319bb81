"""Sliding-window inference over whole images."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core.tensor import Tensor, no_grad


def window_starts(length: int, patch: int, stride: int) -> list[int]:
    """Starts every ``stride`` plus a final window flush with the far edge."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def model_predictor(model, batch_size: int = 16) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a network returning vessel probabilities as ``(B, 1, p, p) -> (B, p, p)`` numpy."""
    def predict(batch: np.ndarray) -> np.ndarray:
        was_training = getattr(model, "training", False)
        model.eval()
        dtype = model.parameters()[0].dtype
        outs = []
        try:
            with no_grad():
                for i in range(0, len(batch), batch_size):
                    outs.append(model(Tensor(batch[i:i + batch_size].astype(dtype))).data)
        finally:
            if was_training:
                model.train()
        return np.concatenate(outs, axis=0)
    return predict


def sliding_window_infer(model, image: np.ndarray, stride: int = 8, patch: int = 64,
                         return_counts: bool = False):
    """Mean of overlapping window predictions at every pixel.

    ``model`` maps ``(B, 1, patch, patch)`` arrays to ``(B, patch, patch)``
    probabilities (a :class:`DBKAUNet` is wrapped automatically).  Images
    smaller than the window are reflect-padded and the result cropped.
    """
    if not callable(model) or hasattr(model, "parameters"):
        model = model_predictor(model)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {np.shape(image)}")
    h, w = img.shape
    ph, pw = max(patch - h, 0), max(patch - w, 0)
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    H, W = img.shape
    ys, xs = window_starts(H, patch, stride), window_starts(W, patch, stride)
    corners = [(y, x) for y in ys for x in xs]
    windows = np.stack([img[y:y + patch, x:x + patch] for y, x in corners])[:, None]
    preds = np.asarray(model(windows), dtype=np.float64).reshape(len(corners), patch, patch)
    total = np.zeros((H, W))
    count = np.zeros((H, W), dtype=np.int64)
    for (y, x), p in zip(corners, preds):
        total[y:y + patch, x:x + patch] += p
        count[y:y + patch, x:x + patch] += 1
    out = (total / count)[:h, :w]
    return (out, count[:h, :w]) if return_counts else out
