"""Registry of finite-difference gradient checks for every op and block."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ops
from .core.gradcheck import gradcheck
from .core.module import BatchNorm2d, LayerNorm, Module, Parameter
from .core.tensor import Tensor, get_default_dtype, set_default_dtype
from .fusion import CCI, PAM, SAM, SFE
from .geometric import (
    LDConv, _point_weighted_sum, bilinear_sample, conv2d, depthwise_conv2d, transposed_conv2d,
)
from .kan import GRKAN, GroupRational, KANConvBlock, KANLinear, bspline_basis, rational, uniform_knots
from .network import (
    CNNDecoder, DBKAUNet, KANDecoder, KATBlock, NetworkConfig, ResidualBlock, ViTBlock,
)

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4

Builder = Callable[[np.random.Generator, int], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class GradCase:
    name: str
    build: Builder
    kind: str = "primitive"
    variants: int = 3
    max_elements: int | None = None

    @property
    def tol(self) -> float:
        return PRIMITIVE_TOL if self.kind == "primitive" else COMPOSITE_TOL


@dataclass
class CaseResult:
    name: str
    kind: str
    max_error: float
    tol: float
    seconds: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.max_error < self.tol


def _t(rng, *shape, lo=None, away=0.0) -> Tensor:
    """Random leaf; ``away`` keeps values at least that far from zero (off kinks)."""
    x = rng.normal(size=shape)
    if away:
        x = np.sign(x) * (away + np.abs(x))
    if lo is not None:
        x = lo + np.abs(x)
    return Tensor(x)


def _readout(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: ops.sum(y * w)


def _case(fn, inputs, rng):
    """Scalar closure ``sum(fn() * W)`` with a fixed random ``W``."""
    read = _readout(fn(), rng)
    return (lambda: read(fn())), inputs


def _unary(op, **kw):
    shapes = [(5,), (3, 4), (2, 3, 4)]

    def build(rng, v):
        x = _t(rng, *shapes[v], **kw)
        return _case(lambda: op(x), [x], rng)
    return build


def _binary(op, lo=None):
    shapes = [((4,), (4,)), ((3, 4), (4,)), ((2, 1, 4), (3, 1))]

    def build(rng, v):
        sa, sb = shapes[v]
        a, b = _t(rng, *sa), _t(rng, *sb, lo=lo)
        return _case(lambda: op(a, b), [a, b], rng)
    return build


def _shaped(shapes, fn):
    def build(rng, v):
        x = _t(rng, *shapes[v])
        return _case(lambda: fn(x, v), [x], rng)
    return build


def _matmul(rng, v):
    sa, sb = [((4, 3), (3, 2)), ((2, 3, 4), (4, 5)), ((2, 2, 3), (2, 3, 2))][v]
    a, b = _t(rng, *sa), _t(rng, *sb)
    return _case(lambda: ops.matmul(a, b), [a, b], rng)


def _concat(rng, v):
    a, b = _t(rng, 2, 3 + v), _t(rng, 4, 3 + v)
    return _case(lambda: ops.concat([a, b, a], axis=0), [a, b], rng)


def _batch_norm(rng, v):
    c = 2 + v
    x, g, b = _t(rng, 2 + v, c, 3, 3), _t(rng, c), _t(rng, c)
    rm, rv = np.zeros(c), np.ones(c)
    return _case(lambda: ops.batch_norm(x, g, b, rm.copy(), rv.copy(), True), [x, g, b], rng)


def _layer_norm(rng, v):
    d = 3 + v
    x, g, b = _t(rng, 2, d), _t(rng, d), _t(rng, d)
    return _case(lambda: ops.layer_norm(x, g, b), [x, g, b], rng)


def _conv(rng, v):
    b, ci, co, h, k, s, p = [(2, 3, 2, 6, 3, 1, 1), (1, 2, 3, 7, 3, 2, 0), (2, 1, 2, 5, 5, 1, 2)][v]
    x, w, bias = _t(rng, b, ci, h, h), _t(rng, co, ci, k, k), _t(rng, co)
    return _case(lambda: conv2d(x, w, bias, s, p), [x, w, bias], rng)


def _depthwise(rng, v):
    b, c, h, k, s, p = [(2, 3, 6, 3, 1, 1), (1, 2, 7, 3, 2, 1), (2, 2, 5, 5, 1, 2)][v]
    x, w, bias = _t(rng, b, c, h, h), _t(rng, c, 1, k, k), _t(rng, c)
    return _case(lambda: depthwise_conv2d(x, w, bias, s, p), [x, w, bias], rng)


def _transposed(rng, v):
    b, ci, co, h, k, s = [(2, 3, 2, 3, 2, 2), (1, 2, 3, 4, 3, 2), (2, 2, 2, 3, 3, 1)][v]
    x, w, bias = _t(rng, b, ci, h, h), _t(rng, ci, co, k, k), _t(rng, co)
    return _case(lambda: transposed_conv2d(x, w, bias, s), [x, w, bias], rng)


def _bilinear(rng, v):
    b, c, h, k = [(1, 2, 5, 7), (2, 3, 4, 5), (2, 1, 6, 9)][v]
    x = _t(rng, b, c, h, h)
    # bilinear weights have kinks at integer coordinates; keep samples off them
    coords = Tensor(rng.integers(-1, h, size=(b, k, 2)) + rng.uniform(0.05, 0.95, size=(b, k, 2)))
    return _case(lambda: bilinear_sample(x, coords), [x, coords], rng)


def _point_sum(rng, v):
    b, ci, n, hw, co = [(2, 3, 4, 5, 2), (1, 2, 20, 4, 3), (2, 1, 6, 3, 2)][v]
    s, w = _t(rng, b, ci, n, hw), _t(rng, co, ci, n)
    return _case(lambda: _point_weighted_sum(s, w), [s, w], rng)


def _bspline(rng, v):
    order, shape = [(3, (7,)), (2, (3, 4)), (1, (2, 5))][v]
    knots = uniform_knots(-2.0, 2.0, 5, order)
    x = Tensor(rng.uniform(-1.95, 1.95, size=shape))
    return _case(lambda: bspline_basis(x, knots, order), [x], rng)


def _rational(rng, v):
    ch, groups = [(4, 2), (6, 3), (8, 8)][v]
    a, b = _t(rng, groups, 6), Tensor(rng.normal(scale=0.5, size=(groups, 4)))
    gid = np.arange(ch) // (ch // groups)
    # bounded inputs keep the fifth-power terms' truncation error small
    x = Tensor(rng.uniform(-1.5, 1.5, size=(3, ch)))
    # redraw until no denominator sits within 1e-2 of the |Q| kink at Q = 0
    while np.min(np.abs(sum(b.data[gid, j] * x.data ** (j + 1) for j in range(4)))) < 1e-2:
        x = Tensor(rng.uniform(-1.5, 1.5, size=(3, ch)))
    gam = _t(rng, groups)
    return _case(lambda: rational(x, a, b, gam, groups), [x, a, b, gam], rng)


def _jitter(module: Module, rng: np.random.Generator, scale: float = 0.05) -> Module:
    """Move parameters off their (often symmetric or zero) initial values."""
    for p in module.parameters():
        p.data = p.data + rng.normal(scale=scale, size=p.shape)
    return module


def _smooth_denominators(root: Module) -> Module:
    """Make every rational denominator even and nonnegative in ``x``.

    ``|Q|`` has a kink wherever ``Q`` changes sign; with only even powers
    and nonnegative coefficients ``Q >= 0`` everywhere, so finite
    differences never straddle one.
    """
    for _, m in root.named_modules():
        if isinstance(m, GroupRational):
            b = m.b.data
            b[:, 0::2] = 0.0
            b[:, 1::2] = np.abs(b[:, 1::2])
    return root


def _module_case(make, *input_shapes):
    def build(rng, v):
        mod = _smooth_denominators(_jitter(make(rng), rng))
        xs = [_t(rng, *s) for s in input_shapes]

        def fn():
            y = mod(*xs)
            if isinstance(y, tuple):
                return ops.concat([ops.reshape(t, (-1,)) for t in y], axis=0)
            return y
        read = _readout(fn(), rng)
        return (lambda: read(fn())), xs + mod.parameters()
    return build


KINK_MARGIN = 2e-3


def _kink_safe_offsets(layer: LDConv, rng: np.random.Generator) -> LDConv:
    """Fractional offsets in (0.3, 0.7) plus an integer shift, with weak input dependence.

    Bilinear sampling is not differentiable at integer coordinates, so
    central differences must not straddle one.  Weak offset weights keep
    every coordinate's fractional part near its bias, far more than
    ``KINK_MARGIN`` from an integer.
    """
    n2 = layer.offset_bias.shape[0]
    layer.offset_weight.data = rng.normal(scale=0.01, size=layer.offset_weight.shape)
    layer.offset_bias.data = rng.integers(-2, 3, size=n2) + rng.uniform(0.3, 0.7, size=n2)
    return layer


def _check_margin(layer: LDConv, x: Tensor) -> None:
    coords = layer.sampling_coords(layer.offsets(x)).data
    frac = coords - np.floor(coords)
    if np.min(np.minimum(frac, 1.0 - frac)) < KINK_MARGIN:
        raise RuntimeError("LDConv sampling coordinates too close to an integer for finite differences")


def _ldconv_case(rng, v):
    m = _kink_safe_offsets(_jitter(LDConv(2, 3, rng), rng), rng)
    x = _t(rng, 2, 2, 5, 5)
    _check_margin(m, x)
    return _case(lambda: m(x), [x] + m.parameters(), rng)


def _sfe_gaf_case(rng, v):
    m = _jitter(SFE(2, 3, 2, rng, gaf=True), rng)
    for conv in (m.conv_l, m.conv_g):
        _kink_safe_offsets(conv, rng)
    lx, gx = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 4, 4)
    _check_margin(m.conv_l, m.pam_l(lx))
    _check_margin(m.conv_g, m.pam_g(gx))
    return _case(lambda: m(lx, gx), [lx, gx] + m.parameters(), rng)


def miniature_config() -> NetworkConfig:
    return NetworkConfig(base_channels=4, heads=(2, 2, 2, 2), rational_groups=4)


def _network(rng, v):
    model = _jitter(DBKAUNet(miniature_config(), seed=int(rng.integers(1 << 31))), rng, 0.02)
    _smooth_denominators(model)
    for _, mod in model.named_modules():
        if isinstance(mod, LDConv):
            _kink_safe_offsets(mod, rng)
    x = _t(rng, 2, 1, 32, 32)
    return _case(lambda: model(x), model.parameters(), rng)


def default_registry() -> list[GradCase]:
    prim = [
        GradCase("add", _binary(ops.add)),
        GradCase("sub", _binary(ops.sub)),
        GradCase("mul", _binary(ops.mul)),
        GradCase("div", _binary(ops.div, lo=0.5)),
        GradCase("power", _unary(lambda x: ops.power(x, 1.7), lo=0.2)),
        GradCase("exp", _unary(ops.exp)),
        GradCase("log", _unary(ops.log, lo=0.2)),
        GradCase("sqrt", _unary(ops.sqrt, lo=0.2)),
        GradCase("abs", _unary(ops.abs, away=0.05)),
        GradCase("relu", _unary(ops.relu, away=0.05)),
        GradCase("sigmoid", _unary(ops.sigmoid)),
        GradCase("silu", _unary(ops.silu)),
        GradCase("gelu", _unary(ops.gelu)),
        GradCase("tanh", _unary(ops.tanh)),
        GradCase("clip", _unary(lambda x: ops.clip(x, -0.5, 0.5), away=0.05)),
        GradCase("scale", _unary(lambda x: ops.scale(x, -1.3))),
        GradCase("sum", _shaped([(4,), (3, 4), (2, 3, 4)], lambda x, v: ops.sum(x, axis=-1, keepdims=v == 1))),
        GradCase("mean", _shaped([(4,), (3, 4), (2, 3, 4)], lambda x, v: ops.mean(x, axis=0))),
        GradCase("reshape", _shaped([(6,), (3, 4), (2, 3, 4)], lambda x, v: ops.reshape(x, (-1, 2)))),
        GradCase("transpose", _shaped([(3, 2), (3, 4), (2, 3, 4)], lambda x, v: ops.transpose(x))),
        GradCase("getitem", _shaped([(5,), (3, 4), (2, 3, 4)],
                                    lambda x, v: x[np.array([0, 2, 0])] if v == 0 else x[1:, ::2])),
        GradCase("take", _shaped([(5,), (3, 4), (2, 3, 4)], lambda x, v: ops.take(x, np.array([0, 1, 1]), -1))),
        GradCase("concat", _concat),
        GradCase("matmul", _matmul),
        GradCase("softmax", _shaped([(5,), (3, 4), (2, 3, 4)], lambda x, v: ops.softmax(x, dim=-1 if v != 2 else 1))),
        GradCase("batch_norm", _batch_norm),
        GradCase("layer_norm", _layer_norm),
        GradCase("adaptive_avg_pool2d", _shaped([(1, 2, 5, 5), (2, 1, 6, 4), (1, 1, 7, 7)],
                                                lambda x, v: ops.adaptive_avg_pool2d(x, [(3, 3), (2, 3), (1, 1)][v]))),
        GradCase("avg_pool2d", _shaped([(1, 2, 4, 4), (2, 1, 6, 4), (1, 1, 6, 6)],
                                       lambda x, v: ops.avg_pool2d(x, 2 if v < 2 else 3))),
        GradCase("upsample_nearest", _shaped([(1, 2, 2, 2), (2, 1, 3, 2), (1, 1, 3, 3)],
                                             lambda x, v: ops.upsample_nearest(x, [(4, 4), (6, 4), (5, 5)][v]))),
        GradCase("conv2d", _conv),
        GradCase("depthwise_conv2d", _depthwise),
        GradCase("transposed_conv2d", _transposed),
        GradCase("bilinear_sample", _bilinear),
        GradCase("point_weighted_sum", _point_sum),
        GradCase("bspline_basis", _bspline),
        GradCase("rational", _rational),
    ]
    comp = [
        GradCase("KANLinear", _module_case(lambda r: KANLinear(3, 2, r), (4, 3)), "composite", 1),
        GradCase("LayerNorm", _module_case(lambda r: LayerNorm(4), (3, 4)), "composite", 1),
        GradCase("BatchNorm2d", _module_case(lambda r: BatchNorm2d(2), (3, 2, 2, 2)), "composite", 1),
        GradCase("GRKAN", _module_case(lambda r: GRKAN(8, 4, r, groups=4), (3, 8)), "composite", 1),
        GradCase("LDConv", _ldconv_case, "composite", 1),
        GradCase("SAM", _module_case(lambda r: SAM(2, r), (2, 2, 4, 4)), "composite", 1),
        GradCase("PAM", _module_case(lambda r: PAM(3, r), (2, 3, 3, 3)), "composite", 1),
        GradCase("CCI", _module_case(lambda r: CCI(3, 5, r), (2, 3, 4, 4), (2, 5, 4, 4)), "composite", 1),
        GradCase("SFE", _module_case(lambda r: SFE(2, 3, 2, r), (2, 2, 4, 4), (2, 3, 4, 4)), "composite", 1),
        GradCase("SFE-GAF", _sfe_gaf_case, "composite", 1),
        GradCase("KANConv", _module_case(lambda r: KANConvBlock(2, r, out_channels=3), (2, 2, 4, 4)), "composite", 1),
        GradCase("ResidualBlock", _module_case(lambda r: ResidualBlock(2, 3, r, 2), (2, 2, 4, 4)), "composite", 1),
        GradCase("ViTBlock", _module_case(lambda r: ViTBlock(8, 2, r), (2, 4, 8)), "composite", 1),
        GradCase("KATBlock", _module_case(lambda r: KATBlock(8, 2, r), (2, 4, 8)), "composite", 1),
        GradCase("CNNDecoder", _module_case(lambda r: CNNDecoder(3, 2, r), (2, 3, 2, 2)), "composite", 1),
        GradCase("KANDecoder", _module_case(lambda r: KANDecoder(3, 2, r), (2, 3, 2, 2)), "composite", 1),
        GradCase("DBKAUNet-miniature", _network, "composite", 1, max_elements=20),
    ]
    return prim + comp


def run_case(case: GradCase, seed: int = 0) -> CaseResult:
    start = time.time()
    worst = 0.0
    try:
        for v in range(case.variants):
            rng = np.random.default_rng([seed, v, sum(map(ord, case.name))])
            f, inputs = case.build(rng, v)
            worst = max(worst, gradcheck(f, inputs, max_elements=case.max_elements, rng=rng))
    except Exception as exc:  # reported per op, the suite keeps going
        return CaseResult(case.name, case.kind, float("nan"), case.tol, time.time() - start,
                          f"{type(exc).__name__}: {exc}")
    return CaseResult(case.name, case.kind, worst, case.tol, time.time() - start)


def run_suite(registry: list[GradCase] | None = None, seed: int = 0,
              report: Callable[[CaseResult], None] | None = None) -> list[CaseResult]:
    """Run every case at 64-bit precision; ``report`` is called after each."""
    registry = default_registry() if registry is None else registry
    names = [c.name for c in registry]
    if len(set(names)) != len(names):
        raise ValueError("duplicate names in gradcheck registry")
    previous = get_default_dtype()
    set_default_dtype(np.float64)
    results = []
    try:
        for case in registry:
            res = run_case(case, seed)
            results.append(res)
            if report:
                report(res)
    finally:
        set_default_dtype(previous)
    return results
