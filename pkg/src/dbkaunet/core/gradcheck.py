"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad


def _scalar(f: Callable[[], Tensor]) -> float:
    with no_grad():
        out = f()
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    val = float(out.data.reshape(-1)[0])
    if not np.isfinite(val):
        raise NonFiniteError(f"non-finite value from op {out.op!r}")
    return val


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradcheck(f: Callable[[], Tensor], inputs: Tensor | Sequence[Tensor], eps: float = 1e-4,
              max_elements: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backward() and central differences.

    ``f`` is a zero-argument closure over ``inputs`` returning a scalar.
    Inputs are perturbed in place and restored, and temporarily marked as
    requiring gradients.  When ``max_elements`` is
    given, that many entries are sampled (across all inputs) instead of
    checking every entry.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    saved_flags = [x.requires_grad for x in inputs]
    for x in inputs:
        x.requires_grad = True
        if not x.data.flags.c_contiguous:
            x.data = np.ascontiguousarray(x.data)
        if not np.all(np.isfinite(x.data)):
            raise NonFiniteError("gradcheck input is not finite")
        x.grad = None

    out = f()
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        bad = next((n for n in out.topological_order() if not np.all(np.isfinite(n.data))), out)
        raise NonFiniteError(f"non-finite value from op {bad.op!r} (output shape {bad.shape})")
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite analytic gradient")

    sites = [(i, j) for i, x in enumerate(inputs) for j in range(x.size)]
    if max_elements is not None and len(sites) > max_elements:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(sites), size=max_elements, replace=False)
        sites = [sites[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in sites:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        fp = _scalar(f)
        flat[j] = orig - eps
        fm = _scalar(f)
        flat[j] = orig
        numeric = (fp - fm) / (2.0 * eps)
        err = float(relative_error(np.array(analytic[i].reshape(-1)[j]), np.array(numeric)))
        worst = max(worst, err)
    for x, flag in zip(inputs, saved_flags):
        x.grad = None
        x.requires_grad = flag
    return worst
