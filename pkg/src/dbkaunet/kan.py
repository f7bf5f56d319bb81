"""Learnable-activation layers: B-spline KAN edges and group-rational units."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.module import BatchNorm2d, Module, Parameter, kaiming_uniform
from .core.tensor import ShapeError, Tensor, ensure_tensor, get_default_dtype
from .geometric import Conv2d, DepthwiseConv2d, _as_batched, _unbatch


# -- B-spline basis ----------------------------------------------------------------

def uniform_knots(grid_min: float = -2.0, grid_max: float = 2.0, intervals: int = 5,
                  spline_order: int = 3) -> np.ndarray:
    """Uniform knot vector extended by ``spline_order`` knots on each side."""
    if grid_max <= grid_min or intervals < 1 or spline_order < 0:
        raise ValueError("need grid_max > grid_min, intervals >= 1, spline_order >= 0")
    h = (grid_max - grid_min) / intervals
    return grid_min + h * np.arange(-spline_order, intervals + spline_order + 1, dtype=np.float64)


def _local_basis(x: np.ndarray, knots: np.ndarray, order: int):
    """Nonzero basis values at each point via the local Cox-de Boor triangle.

    Returns ``(span, values, deriv)``: ``values[..., r]`` is ``B_{span-order+r}``
    and ``deriv[..., r]`` its derivative in ``x`` (``None`` when ``order == 0``).
    The derivative reuses the last stage's quotients:
    ``B'_r = order * (temp_{r-1} - temp_r)``.
    """
    lo, hi = knots[order], knots[len(knots) - order - 1]
    xc = np.clip(x, lo, hi)
    span = np.searchsorted(knots, xc, side="right") - 1
    span = np.clip(span, order, len(knots) - order - 2)
    vals = [np.ones_like(xc)]
    left = [xc - knots[span + 1 - j] for j in range(1, order + 1)]
    right = [knots[span + j] - xc for j in range(1, order + 1)]
    temps = []
    for d in range(1, order + 1):
        nxt, temps = [], []
        saved = np.zeros_like(xc)
        for r in range(d):
            temp = vals[r] / (right[r] + left[d - r - 1])
            temps.append(temp)
            nxt.append(saved + right[r] * temp)
            saved = left[d - r - 1] * temp
        nxt.append(saved)
        vals = nxt
    deriv = None
    if order:
        zero = np.zeros_like(xc)
        deriv = np.stack([order * ((temps[r - 1] if r else zero) - (temps[r] if r < order else zero))
                          for r in range(order + 1)], axis=-1)
    return span, np.stack(vals, axis=-1), deriv


def _scatter(span: np.ndarray, local: np.ndarray, first: int, width: int) -> np.ndarray:
    dense = np.zeros(span.shape + (width,), dtype=local.dtype)
    idx = (span - first)[..., None] + np.arange(local.shape[-1])
    np.put_along_axis(dense, idx, local, axis=-1)
    return dense


def bspline_basis(x, knots: np.ndarray, spline_order: int = 3) -> Tensor:
    """B-spline basis values via the Cox-de Boor recursion.

    Returns ``x.shape + (N,)`` with ``N = len(knots) - spline_order - 1``.
    Inputs outside ``[knots[k], knots[-k-1]]`` are clamped to the boundary
    (zero gradient there).
    """
    x = ensure_tensor(x)
    knots = np.asarray(knots, dtype=np.float64)
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knot vector must be strictly increasing")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("bspline_basis input must be finite")
    k = spline_order
    kn = knots.astype(x.dtype)
    n_basis = len(kn) - k - 1
    span, local, deriv = _local_basis(x.data, kn, k)
    basis = _scatter(span, local, k, n_basis)

    def backward(g):
        if k == 0:
            return (np.zeros(x.shape, dtype=x.dtype),)
        inside = (x.data >= kn[k]) & (x.data <= kn[len(kn) - k - 1])
        idx = (span - k)[..., None] + np.arange(k + 1)
        return ((np.take_along_axis(g, idx, axis=-1) * deriv).sum(axis=-1) * inside,)

    return Tensor._from_op(basis, (x,), backward, "bspline_basis")


# -- KANLinear ---------------------------------------------------------------------

class KANLinear(Module):
    """Edges ``phi(x) = beta * SiLU(x) + s * sum_k c_k B_k(x)`` summed per output.

    ``beta`` and ``s`` are ``(n_out, n_in)``, ``c`` is ``(n_out, n_in, N)``;
    one knot grid is shared by every edge of the layer.
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, grid_intervals: int = 5,
                 spline_order: int = 3, grid_range: tuple[float, float] = (-2.0, 2.0),
                 beta_init: float | None = None, coef_std: float = 0.1):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.spline_order = spline_order
        self.grid_range = tuple(grid_range)
        self.knots = uniform_knots(grid_range[0], grid_range[1], grid_intervals, spline_order)
        n_basis = grid_intervals + spline_order
        if beta_init is None:
            self.beta = Parameter(kaiming_uniform(rng, (n_out, n_in), n_in))
        else:
            self.beta = Parameter(np.full((n_out, n_in), float(beta_init)))
        self.scale = Parameter(np.ones((n_out, n_in)))
        self.coef = Parameter(rng.normal(0.0, coef_std, size=(n_out, n_in, n_basis)))

    @property
    def n_basis(self) -> int:
        return self.coef.shape[-1]

    def forward(self, x: Tensor) -> Tensor:
        x = ensure_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"KANLinear expects last dim {self.n_in}, got shape {x.shape}")
        lead = x.shape[:-1]
        flat = ops.reshape(x, (-1, self.n_in))
        base = ops.matmul(ops.silu(flat), ops.transpose(self.beta))
        basis = ops.reshape(bspline_basis(flat, self.knots, self.spline_order), (-1, self.n_in * self.n_basis))
        weights = ops.mul(self.coef, ops.reshape(self.scale, (self.n_out, self.n_in, 1)))
        spline = ops.matmul(basis, ops.transpose(ops.reshape(weights, (self.n_out, -1))))
        return ops.reshape(base + spline, lead + (self.n_out,))


def kan_linear_forward(x, layer: KANLinear) -> Tensor:
    return layer(x)


def kan_compose(layers: list[KANLinear], x0) -> Tensor:
    """Apply ``layers`` in sequence (first layer first)."""
    for prev, nxt in zip(layers, layers[1:]):
        if prev.n_out != nxt.n_in:
            raise ShapeError(f"KAN chain mismatch: layer with n_out={prev.n_out} feeds n_in={nxt.n_in}")
    x = x0
    for layer in layers:
        x = layer(x)
    return x


class KAN(Module):
    def __init__(self, widths: list[int], rng: np.random.Generator, **kw):
        super().__init__()
        self.layers = [KANLinear(a, b, rng, **kw) for a, b in zip(widths, widths[1:])]

    def forward(self, x):
        return kan_compose(self.layers, x)


def kan_pixelwise(layer: KANLinear, x: Tensor) -> Tensor:
    """Apply a KANLinear over the channel axis of ``(B, C, H, W)`` at every pixel."""
    b, c, h, w = x.shape
    t = ops.transpose(x, (0, 2, 3, 1))
    y = layer(t)
    return ops.transpose(y, (0, 3, 1, 2))


# -- safe rational (Pade) units ------------------------------------------------------

def rational(x, a: Tensor, b: Tensor, gamma: Tensor, groups: int) -> Tensor:
    """``gamma * P(x) / (1 + |b_1 x + ... + b_n x^n|)`` with per-group coefficients.

    ``x`` is ``(..., C)``; ``a`` is ``(groups, m + 1)``, ``b`` is ``(groups, n)``
    and ``gamma`` is ``(groups,)``.  Channel ``c`` uses group ``c // (C // groups)``.
    """
    x = ensure_tensor(x)
    ch = x.shape[-1]
    if groups < 1 or ch % groups:
        raise ShapeError(f"{ch} channels not divisible into {groups} groups")
    if a.shape[0] != groups or b.shape[0] != groups or gamma.shape != (groups,):
        raise ShapeError(f"coefficient shapes {a.shape}/{b.shape}/{gamma.shape} do not match {groups} groups")
    per = ch // groups
    gid = np.arange(ch) // per
    m, n = a.shape[1] - 1, b.shape[1]
    xd = x.data
    ac, bc, gc = a.data[gid], b.data[gid], gamma.data[gid]

    p = np.zeros_like(xd) + ac[:, m]
    dp = np.zeros_like(xd)
    for j in range(m - 1, -1, -1):
        dp = dp * xd + p
        p = p * xd + ac[:, j]
    s = np.zeros_like(xd) + bc[:, n - 1] if n else np.zeros_like(xd)
    ds = np.zeros_like(xd)
    for j in range(n - 2, -1, -1):
        ds = ds * xd + s
        s = s * xd + bc[:, j]
    # s currently holds b_1 + b_2 x + ...; multiply by x for the x^1.. series
    if n:
        ds = ds * xd + s
        s = s * xd
    q = 1.0 + np.abs(s)
    sg = np.sign(s)
    out = gc * p / q

    def backward(g):
        lead = tuple(range(xd.ndim - 1))
        gx = ga = gb = ggam = None
        if x.requires_grad:
            gx = g * gc * (dp / q - p * sg * ds / (q * q))
        if a.requires_grad or b.requires_grad:
            powers = xd[..., None] ** np.arange(max(m, n) + 1)
        if a.requires_grad:
            coef = (g * gc / q)[..., None] * powers[..., :m + 1]
            ga = coef.sum(axis=lead).reshape(groups, per, m + 1).sum(axis=1)
        if b.requires_grad and n:
            coef = (-g * gc * p * sg / (q * q))[..., None] * powers[..., 1:n + 1]
            gb = coef.sum(axis=lead).reshape(groups, per, n).sum(axis=1)
        if gamma.requires_grad:
            ggam = (g * p / q).sum(axis=lead).reshape(groups, per).sum(axis=1)
        return gx, ga, gb, ggam

    return Tensor._from_op(out, (x, a, b, gamma), backward, "rational")


def safe_denominator(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``1 + |sum_j b_j x^j|`` for one coefficient vector ``b = (b_1..b_n)``."""
    s = np.zeros_like(np.asarray(x, dtype=np.float64))
    for coef in b[::-1]:
        s = (s + coef) * x
    return 1.0 + np.abs(s)


@functools.lru_cache(maxsize=None)
def fit_rational(target: str = "silu", m: int = 5, n: int = 4, lo: float = -4.0,
                 hi: float = 4.0) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Least-squares fit of the safe rational form to ``silu`` or ``identity``."""
    from scipy.optimize import least_squares

    xs = np.linspace(lo, hi, 1001)
    if target == "silu":
        ys = xs / (1.0 + np.exp(-xs))
    elif target == "gelu":
        from scipy.special import erf
        ys = 0.5 * xs * (1.0 + erf(xs / np.sqrt(2.0)))
    elif target == "identity":
        a = np.zeros(m + 1)
        a[1] = 1.0
        return tuple(a), tuple(np.zeros(n))
    else:
        raise ValueError(f"unknown fit target {target!r}")

    vander_p = xs[:, None] ** np.arange(m + 1)
    vander_q = xs[:, None] ** np.arange(1, n + 1)
    # linearized start: P - y * Q' = y, ignoring the absolute value
    lin = np.hstack([vander_p, -ys[:, None] * vander_q])
    start = np.linalg.lstsq(lin, ys, rcond=None)[0]

    def resid(theta):
        a, b = theta[:m + 1], theta[m + 1:]
        return vander_p @ a / (1.0 + np.abs(vander_q @ b)) - ys

    sol = least_squares(resid, start, method="lm", xtol=1e-12, ftol=1e-12)
    return tuple(sol.x[:m + 1]), tuple(sol.x[m + 1:])


@dataclass
class RationalSpec:
    m: int = 5
    n: int = 4
    groups: int = 8
    init: str = "silu"


class GroupRational(Module):
    """Safe Pade activation with coefficients shared inside channel groups."""

    def __init__(self, channels: int, groups: int = 8, m: int = 5, n: int = 4, init: str = "silu"):
        super().__init__()
        if channels % groups:
            raise ShapeError(f"{channels} channels not divisible into {groups} groups")
        a0, b0 = fit_rational(init, m, n)
        self.groups = groups
        self.a = Parameter(np.tile(np.asarray(a0), (groups, 1)))
        self.b = Parameter(np.tile(np.asarray(b0), (groups, 1)))
        self.gamma = Parameter(np.ones(groups))

    def forward(self, x):
        return rational(x, self.a, self.b, self.gamma, self.groups)


def grkan_forward(x, params: GroupRational) -> Tensor:
    return params(x)


class GRKAN(Module):
    """Group-rational activation followed by a linear map."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, groups: int = 8,
                 m: int = 5, n: int = 4, init: str = "silu"):
        super().__init__()
        from .core.module import Linear

        self.act = GroupRational(n_in, groups, m, n, init)
        self.linear = Linear(n_in, n_out, rng)

    def forward(self, x):
        return self.linear(self.act(x))


# -- KANConv block -----------------------------------------------------------------

class KANConvBlock(Module):
    """``GELU(H(X) + D(X))`` mapping ``C x H x W`` to ``2C x H/2 x W/2``.

    Main path: KANLinear (C -> 2C, per pixel), stride-2 depthwise 3x3,
    KANLinear (2C -> 2C), depthwise 3x3, batch norm.  Shortcut: 2x2 average
    pool then a 1x1 projection to 2C channels.
    """

    def __init__(self, channels: int, rng: np.random.Generator, out_channels: int | None = None, **kan_kw):
        super().__init__()
        c2 = out_channels or 2 * channels
        self.phi1 = KANLinear(channels, c2, rng, **kan_kw)
        self.dw1 = DepthwiseConv2d(c2, 3, rng, stride=2, padding=1)
        self.phi2 = KANLinear(c2, c2, rng, **kan_kw)
        self.dw2 = DepthwiseConv2d(c2, 3, rng, stride=1, padding=1, bias=False)
        self.bn = BatchNorm2d(c2)
        self.proj = Conv2d(channels, c2, 1, rng, padding=0)

    def main_path(self, x: Tensor) -> Tensor:
        y = kan_pixelwise(self.phi1, x)
        y = self.dw1(y)
        y = kan_pixelwise(self.phi2, y)
        y = self.dw2(y)
        return self.bn(y)

    def shortcut(self, x: Tensor) -> Tensor:
        return self.proj(ops.avg_pool2d(x, 2))

    def forward(self, x) -> Tensor:
        xb, squeeze = _as_batched(x)
        h, w = xb.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(f"KANConv block needs even spatial dims, got {(h, w)}")
        y = ops.gelu(self.main_path(xb) + self.shortcut(xb))
        return _unbatch(y, squeeze)


def kanconv_block_forward(x, params: KANConvBlock) -> Tensor:
    return params(x)
