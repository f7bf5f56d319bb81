"""Random patch sampling and training-time augmentation."""

from __future__ import annotations

import numpy as np


def worker_seed(base_seed: int, k: int) -> int:
    """Seed for worker/item ``k``, independent of scheduling order."""
    return int(np.random.SeedSequence([int(base_seed), int(k)]).generate_state(1)[0])


def _unpack(sample):
    if isinstance(sample, tuple):
        image, mask = sample[0], sample[1]
    else:
        image, mask = sample.image, sample.mask
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ")
    return image, mask


def extract_patches(sample, count: int, size: int = 64, rng_seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``count`` patches at uniform random top-left corners, fully inside the image.

    ``sample`` is ``(image, mask, ...)`` with a 2-D (or ``(1, H, W)``) image.
    """
    image, mask = _unpack(sample)
    h, w = image.shape
    if h < size or w < size:
        raise ValueError(f"image {image.shape} smaller than patch size {size}")
    rng = np.random.default_rng(rng_seed)
    ys = rng.integers(0, h - size + 1, size=count)
    xs = rng.integers(0, w - size + 1, size=count)
    return [(image[y:y + size, x:x + size].copy(), mask[y:y + size, x:x + size].copy())
            for y, x in zip(ys, xs)]


def extract_patch_set(samples, count: int, size: int = 64, seed: int = 0):
    """Spread ``count`` patches evenly over ``samples``; image ``k`` uses ``worker_seed(seed, k)``."""
    n = len(samples)
    if n == 0:
        return []
    per = [count // n + (1 if k < count % n else 0) for k in range(n)]
    out = []
    for k, (sample, c) in enumerate(zip(samples, per)):
        out.extend(extract_patches(sample, c, size, worker_seed(seed, k)))
    return out


def rotate_flip(arr: np.ndarray, k: int, flip_h: bool, flip_v: bool) -> np.ndarray:
    out = np.rot90(arr, k)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def augment(patch: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
            jitter: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Random quarter-turn rotation and H/V flips on both; brightness/contrast jitter on the patch.

    Jitter draws brightness and contrast factors from ``1 +/- jitter``,
    scales contrast around the patch mean, and clamps to ``[0, 1]``.
    """
    if patch.shape[-1] != patch.shape[-2]:
        raise ValueError(f"augment expects a square patch, got {patch.shape}")
    k = int(rng.integers(0, 4))
    flip_h, flip_v = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
    brightness = rng.uniform(1.0 - jitter, 1.0 + jitter)
    contrast = rng.uniform(1.0 - jitter, 1.0 + jitter)
    p = rotate_flip(patch, k, flip_h, flip_v)
    m = rotate_flip(mask, k, flip_h, flip_v)
    mean = p.mean()
    p = np.clip(((p - mean) * contrast + mean) * brightness, 0.0, 1.0)
    return p.astype(patch.dtype, copy=False), m
