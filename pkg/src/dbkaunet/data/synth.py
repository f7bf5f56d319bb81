"""Synthetic vessel-like images with exact ground truth."""

from __future__ import annotations

import numpy as np

from .io import FundusSample

NOISE_SIGMA = 0.05


def _bezier(p0, p1, p2, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _border_point(rng: np.random.Generator, size: int, side: int) -> np.ndarray:
    u = rng.uniform(0, size - 1)
    return np.array([(0.0, u), (size - 1.0, u), (u, 0.0), (u, size - 1.0)][side])


def _distance_to_polyline(pts: np.ndarray, size: int) -> np.ndarray:
    """Distance from every pixel center to the nearest segment of ``pts``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    grid = np.stack([yy.ravel(), xx.ravel()], axis=1)
    best = np.full(len(grid), np.inf)
    a, b = pts[:-1], pts[1:]
    for start in range(0, len(a), 64):
        sa, sb = a[start:start + 64], b[start:start + 64]
        d = sb - sa
        len2 = np.maximum((d ** 2).sum(axis=1), 1e-12)
        rel = grid[:, None, :] - sa[None]
        t = np.clip((rel * d[None]).sum(axis=-1) / len2, 0.0, 1.0)
        proj = sa[None] + t[..., None] * d[None]
        dist = np.sqrt(((grid[:, None, :] - proj) ** 2).sum(axis=-1)).min(axis=1)
        np.minimum(best, dist, out=best)
    return best.reshape(size, size)


def synth_vessel(seed: int, size: int = 64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(image, mask, fov)`` with ``image`` float64 ``(size, size)`` in ``[0, 1]``.

    Two to five quadratic Bezier curves joining two different frame sides
    are rasterized with widths in ``[1, 4]`` px and darken a smooth,
    linearly shaded background by 0.2 to 0.4; Gaussian noise
    (sigma 0.05) is added last.  The FOV is the full frame.
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    base = rng.uniform(0.55, 0.75)
    gy, gx = rng.uniform(-0.1, 0.1, size=2)
    background = base + gy * (yy - 0.5) + gx * (xx - 0.5)

    darkening = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(rng.integers(2, 6)):
        s0, s1 = rng.choice(4, size=2, replace=False)
        p0, p2 = _border_point(rng, size, s0), _border_point(rng, size, s1)
        p1 = rng.uniform(0.15 * size, 0.85 * size, size=2)
        width = rng.uniform(1.0, 4.0)
        contrast = rng.uniform(0.2, 0.4)
        pts = _bezier(p0, p1, p2, 4 * size)
        inside = _distance_to_polyline(pts, size) <= width / 2.0
        mask |= inside.astype(np.uint8)
        darkening = np.maximum(darkening, contrast * inside)
    image = background - darkening + rng.normal(0.0, NOISE_SIGMA, size=(size, size))
    return np.clip(image, 0.0, 1.0), mask, np.ones((size, size), dtype=np.uint8)


def synth_dataset(count: int, size: int = 64, seed: int = 0):
    """``count`` synthetic ``(image, mask, fov)`` triples with per-index seeds."""
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [synth_vessel(int(s), size) for s in seeds]


def as_fundus_sample(image: np.ndarray, mask: np.ndarray, fov: np.ndarray, source_id: str) -> FundusSample:
    """Byte RGB sample (gray replicated) for writing synthetic data to disk."""
    gray = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return FundusSample(np.repeat(gray[None], 3, axis=0), fov.astype(np.uint8), mask.astype(np.uint8), source_id)
