"""Branch interaction: squeeze-and-attention, position attention, CCI and SFE fusers."""

from __future__ import annotations

import numpy as np

from .core import ops
from .core.module import Module, Parameter
from .core.tensor import ShapeError, Tensor, ensure_tensor
from .geometric import Conv2d, LDConv, SamplingPattern, _as_batched, _unbatch


class SAM(Module):
    """Squeeze-and-attention: ``main(x) * att + att`` with ``att`` from a half-resolution branch."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.main = Conv2d(channels, channels, 3, rng)
        self.attn = Conv2d(channels, channels, 3, rng)

    def attention(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        pooled = ops.adaptive_avg_pool2d(x, ((h + 1) // 2, (w + 1) // 2))
        return ops.upsample_nearest(self.attn(pooled), (h, w))

    def forward(self, x) -> Tensor:
        xb, squeeze = _as_batched(x)
        att = self.attention(xb)
        return _unbatch(self.main(xb) * att + att, squeeze)


def sam_forward(x, params: SAM) -> Tensor:
    return params(x)


class PAM(Module):
    """Position attention over all ``H*W`` locations with a zero-initialized residual scale."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        cq = max(channels // 8, 1)
        self.query = Conv2d(channels, cq, 1, rng, padding=0)
        self.key = Conv2d(channels, cq, 1, rng, padding=0, bias=False)
        self.value = Conv2d(channels, channels, 1, rng, padding=0)
        self.scale = Parameter(np.zeros(1))

    def attention_map(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        q = ops.reshape(self.query(x), (b, -1, h * w))
        k = ops.reshape(self.key(x), (b, -1, h * w))
        energy = ops.matmul(ops.swapaxes(q, 1, 2), k)
        return ops.softmax(energy, dim=-1)

    def forward(self, x) -> Tensor:
        xb, squeeze = _as_batched(x)
        b, c, h, w = xb.shape
        attn = self.attention_map(xb)
        v = ops.reshape(self.value(xb), (b, c, h * w))
        ctx = ops.reshape(ops.matmul(v, ops.swapaxes(attn, 1, 2)), (b, c, h, w))
        return _unbatch(xb + self.scale * ctx, squeeze)


def pam_forward(x, params: PAM) -> Tensor:
    return params(x)


class CCI(Module):
    """Cross-branch channel interaction between a CNN map and a Transformer map.

    Channel attention vectors come from ``sigmoid(mean_hw(SAM(.)))`` per
    branch; their outer product ``R`` is softmax-normalized along the
    source branch's channel axis and contracted against that branch's
    channels to project it into the other branch.  Each branch has its own
    SAM.
    """

    def __init__(self, cnn_channels: int, trans_channels: int, rng: np.random.Generator):
        super().__init__()
        self.sam_l = SAM(cnn_channels, rng)
        self.sam_g = SAM(trans_channels, rng)

    def correlation(self, lmap: Tensor, gmap: Tensor) -> Tensor:
        """``R`` of shape ``(B, C_c, C_t)``."""
        l_attn = ops.sigmoid(ops.adaptive_avg_pool_to_1(self.sam_l(lmap)))
        g_attn = ops.sigmoid(ops.adaptive_avg_pool_to_1(self.sam_g(gmap)))
        b = lmap.shape[0]
        return ops.matmul(ops.reshape(l_attn, (b, -1, 1)), ops.reshape(g_attn, (b, 1, -1)))

    def forward(self, lmap, gmap) -> tuple[Tensor, Tensor]:
        lb, squeeze = _as_batched(lmap)
        gb, _ = _as_batched(gmap)
        if lb.shape[0] != gb.shape[0] or lb.shape[-2:] != gb.shape[-2:]:
            raise ShapeError(f"CCI needs matching batch/spatial dims, got {lb.shape} and {gb.shape}")
        b, cc, h, w = lb.shape
        ct = gb.shape[1]
        r = self.correlation(lb, gb)
        s_lg = ops.softmax(r, dim=1)                        # normalized over C_c
        s_gl = ops.softmax(ops.swapaxes(r, 1, 2), dim=1)    # normalized over C_t
        lflat = ops.reshape(lb, (b, cc, h * w))
        gflat = ops.reshape(gb, (b, ct, h * w))
        l_to_g = ops.reshape(ops.matmul(ops.swapaxes(s_lg, 1, 2), lflat), (b, ct, h, w))
        g_to_l = ops.reshape(ops.matmul(ops.swapaxes(s_gl, 1, 2), gflat), (b, cc, h, w))
        return _unbatch(g_to_l + lb, squeeze), _unbatch(l_to_g + gb, squeeze)


def cci_forward(lmap, gmap, params: CCI) -> tuple[Tensor, Tensor]:
    return params(lmap, gmap)


class SFE(Module):
    """``conv(PAM(L)) + conv(PAM(G))`` with 5x5 convolutions, or LDConv when ``gaf``."""

    def __init__(self, cnn_channels: int, trans_channels: int, out_channels: int,
                 rng: np.random.Generator, gaf: bool = False, pattern: SamplingPattern | None = None):
        super().__init__()
        self.gaf = gaf
        self.pam_l = PAM(cnn_channels, rng)
        self.pam_g = PAM(trans_channels, rng)
        if gaf:
            self.conv_l = LDConv(cnn_channels, out_channels, rng, pattern)
            self.conv_g = LDConv(trans_channels, out_channels, rng, pattern)
        else:
            self.conv_l = Conv2d(cnn_channels, out_channels, 5, rng, padding=2)
            self.conv_g = Conv2d(trans_channels, out_channels, 5, rng, padding=2)

    def forward(self, l_fuse, g_fuse) -> Tensor:
        a = self.conv_l(self.pam_l(ensure_tensor(l_fuse)))
        b = self.conv_g(self.pam_g(ensure_tensor(g_fuse)))
        if a.shape != b.shape:
            raise ShapeError(f"SFE branches disagree: {a.shape} vs {b.shape}")
        return a + b


def sfe_forward(l_fuse, g_fuse, params: SFE) -> Tensor:
    return params(l_fuse, g_fuse)


def sfe_gaf_forward(l_fuse, g_fuse, params: SFE) -> Tensor:
    if not params.gaf:
        raise ValueError("sfe_gaf_forward needs an SFE built with gaf=True")
    return params(l_fuse, g_fuse)
