"""Fundus preprocessing: green channel, CLAHE, min-max normalization, gamma."""

from __future__ import annotations

import numpy as np

HIST_SIZE = 256


def green_channel(rgb: np.ndarray) -> np.ndarray:
    """Green plane of a ``(3, H, W)`` or ``(H, W, 3)`` byte image."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or 3 not in (rgb.shape[0], rgb.shape[-1]):
        raise ValueError(f"expected a 3-channel image, got shape {rgb.shape}")
    return rgb[1] if rgb.shape[0] == 3 else rgb[..., 1]


def _clip_histogram(hist: np.ndarray, limit: int) -> np.ndarray:
    hist = hist.copy()
    excess = int(np.maximum(hist - limit, 0).sum())
    np.minimum(hist, limit, out=hist)
    batch = excess // HIST_SIZE
    residual = excess - batch * HIST_SIZE
    hist += batch
    if residual:
        step = max(HIST_SIZE // residual, 1)
        idx = np.arange(0, HIST_SIZE, step)[:residual]
        hist[idx] += 1
    return hist


def tile_luts(img: np.ndarray, tiles: tuple[int, int] = (8, 8), clip_limit: float = 2.0) -> np.ndarray:
    """Per-tile equalization tables ``(tiles_y, tiles_x, 256)`` of the padded image."""
    ty, tx = tiles
    th, tw = img.shape[0] // ty, img.shape[1] // tx
    area = th * tw
    limit = max(int(clip_limit * area / HIST_SIZE), 1) if clip_limit > 0 else None
    scale = (HIST_SIZE - 1) / area
    luts = np.empty((ty, tx, HIST_SIZE), dtype=np.uint8)
    for i in range(ty):
        for j in range(tx):
            tile = img[i * th:(i + 1) * th, j * tw:(j + 1) * tw]
            hist = np.bincount(tile.ravel(), minlength=HIST_SIZE).astype(np.int64)
            if limit is not None:
                hist = _clip_histogram(hist, limit)
            luts[i, j] = np.clip(np.rint(np.cumsum(hist) * scale), 0, 255).astype(np.uint8)
    return luts


def clahe(img: np.ndarray, tiles: tuple[int, int] = (8, 8), clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of an 8-bit image.

    Follows the usual tile scheme: the image is reflect-padded (edge not
    repeated) to a tile multiple, each tile's histogram is clipped at
    ``max(int(clip_limit * area / 256), 1)`` with the excess spread evenly,
    and output pixels blend the four nearest tile mappings bilinearly.
    A constant image is returned unchanged.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"clahe expects a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"clahe expects uint8 input, got {img.dtype}")
    if img.min() == img.max():
        return img.copy()
    ty, tx = tiles
    h, w = img.shape
    if h % ty or w % tx:
        # once padding is needed both axes grow by tiles - (dim % tiles), even a divisible one
        ext = np.pad(img, ((0, ty - h % ty), (0, tx - w % tx)), mode="reflect")
    else:
        ext = img
    luts = tile_luts(ext, tiles, clip_limit).astype(np.float32)
    th, tw = ext.shape[0] // ty, ext.shape[1] // tx

    yf = np.arange(h, dtype=np.float32) * np.float32(1.0 / th) - np.float32(0.5)
    xf = np.arange(w, dtype=np.float32) * np.float32(1.0 / tw) - np.float32(0.5)
    y1 = np.floor(yf).astype(np.int64)
    x1 = np.floor(xf).astype(np.int64)
    ya = (yf - y1)[:, None]
    xa = (xf - x1)[None, :]
    y2 = np.minimum(y1 + 1, ty - 1)
    x2 = np.minimum(x1 + 1, tx - 1)
    y1 = np.maximum(y1, 0)
    x1 = np.maximum(x1, 0)

    v = img.astype(np.int64)
    yy1, yy2 = y1[:, None], y2[:, None]
    xx1, xx2 = x1[None, :], x2[None, :]
    top = luts[yy1, xx1, v] * (1 - xa) + luts[yy1, xx2, v] * xa
    bot = luts[yy2, xx1, v] * (1 - xa) + luts[yy2, xx2, v] * xa
    res = top * (1 - ya) + bot * ya
    return np.clip(np.rint(res), 0, 255).astype(np.uint8)


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Map to ``[0, 1]``; a constant image (zero range) maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    rng = x.max() - lo
    return (x - lo) / (rng if rng > 0 else 1.0)


def gamma_correct(x: np.ndarray, gamma: float = 1.2) -> np.ndarray:
    """``x ** (1 / gamma)`` on ``[0, 1]`` data."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)


def preprocess(sample, tiles: tuple[int, int] = (8, 8), clip_limit: float = 2.0,
               gamma: float = 1.2) -> np.ndarray:
    """Green channel -> CLAHE -> min-max -> gamma; returns ``(1, H, W)`` in ``[0, 1]``.

    ``sample`` is a byte RGB array or anything with an ``rgb_image`` field.
    """
    rgb = getattr(sample, "rgb_image", sample)
    g = green_channel(rgb).astype(np.uint8)
    out = gamma_correct(minmax_normalize(clahe(g, tiles, clip_limit)), gamma)
    return out[None]
