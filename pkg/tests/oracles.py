"""Slow, loop-based reference implementations used to check the vectorized ops."""

from __future__ import annotations

import itertools

import numpy as np


def conv2d_loop(x, w, stride=1, pad=0):
    """Direct cross-correlation: ``x (B,Cin,H,W)``, ``w (Cout,Cin,kh,kw)``."""
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for n, o, i, j in itertools.product(range(b), range(cout), range(ho), range(wo)):
        acc = 0.0
        for c, u, v in itertools.product(range(cin), range(kh), range(kw)):
            acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
        out[n, o, i, j] = acc
    return out


def depthwise_loop(x, w, stride=1, pad=0):
    """Per-channel convolution, ``w (C,1,kh,kw)``."""
    b, c, h, wd = x.shape
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, c, ho, wo))
    for n, ch, i, j in itertools.product(range(b), range(c), range(ho), range(wo)):
        out[n, ch, i, j] = sum(xp[n, ch, i * stride + u, j * stride + v] * w[ch, 0, u, v]
                               for u in range(kh) for v in range(kw))
    return out


def transposed_conv_loop(x, w, stride=1, pad=0, output_padding=0):
    """Scatter form: every input pixel adds ``x * w`` into a strided output window."""
    b, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    hf = (h - 1) * stride + kh + output_padding
    wf = (wd - 1) * stride + kw + output_padding
    full = np.zeros((b, cout, hf, wf))
    for n, c, i, j in itertools.product(range(b), range(cin), range(h), range(wd)):
        for o, u, v in itertools.product(range(cout), range(kh), range(kw)):
            full[n, o, i * stride + u, j * stride + v] += x[n, c, i, j] * w[c, o, u, v]
    return full[:, :, pad:hf - pad, pad:wf - pad]


def bspline_scalar(x, knots, i, k):
    """Textbook recursive Cox-de Boor for basis ``i`` of order ``k`` at one point."""
    t = knots
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = (x - t[i]) / (t[i + k] - t[i]) * bspline_scalar(x, t, i, k - 1)
    right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * bspline_scalar(x, t, i + 1, k - 1)
    return left + right


def silu(x):
    return x / (1.0 + np.exp(-x))


def kan_linear_edges(x, beta, scale, coef, knots, k):
    """Sum over edges of ``beta * SiLU(x_i) + s * sum_m c_m B_m(x_i)``, one edge at a time.

    The spline argument is clamped to the grid; the right end is nudged inward
    because the recursion uses half-open spans.
    """
    n_out, n_in, n_basis = coef.shape
    lo, hi = knots[k], np.nextafter(knots[len(knots) - k - 1], -np.inf)
    out = np.zeros((x.shape[0], n_out))
    for r, j, i in itertools.product(range(x.shape[0]), range(n_out), range(n_in)):
        xi = x[r, i]
        xs = min(max(xi, lo), hi)
        spline = sum(coef[j, i, m] * bspline_scalar(xs, knots, m, k) for m in range(n_basis))
        out[r, j] += beta[j, i] * silu(xi) + scale[j, i] * spline
    return out


def rational_horner(x, a, b, gamma):
    """``gamma * P(x) / (1 + |Q(x)|)`` for one coefficient set, via explicit powers."""
    p = sum(a[j] * x ** j for j in range(len(a)))
    q = sum(b[j] * x ** (j + 1) for j in range(len(b)))
    return gamma * p / (1.0 + np.abs(q))


def xshape_points():
    return [(i, i) for i in range(10)] + [(i, 9 - i) for i in range(10)]


def bilinear_point(img, y, x):
    """Bilinear value of ``img (H,W)`` at one point; outside corners read zero."""
    h, w = img.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    val = 0.0
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < h and 0 <= xx < w:
            val += (fy if dy else 1 - fy) * (fx if dx else 1 - fx) * img[yy, xx]
    return val


def ldconv_loop(x, weight, bias, offsets, points, center):
    """Per-pixel deformable conv: ``offsets (B, 2N, H, W)`` rows then cols."""
    b, cin, h, w = x.shape
    cout, _, n = weight.shape
    out = np.zeros((b, cout, h, w))
    for bb, i, j in itertools.product(range(b), range(h), range(w)):
        for k, (pr, pc) in enumerate(points):
            y = i + pr - center[0] + offsets[bb, k, i, j]
            xx = j + pc - center[1] + offsets[bb, n + k, i, j]
            vals = np.array([bilinear_point(x[bb, c], y, xx) for c in range(cin)])
            out[bb, :, i, j] += weight[:, :, k] @ vals
        out[bb, :, i, j] += bias
    return out


def ldconv_gather(x, weight, bias, points, center):
    """Zero-offset LDConv as an integer gather with zero padding."""
    b, cin, h, w = x.shape
    cy, cx = int(center[0]), int(center[1])
    pad = 10
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, weight.shape[0], h, w))
    for k, (pr, pc) in enumerate(points):
        dy, dx = pr - cy, pc - cx
        shifted = xp[:, :, pad + dy:pad + dy + h, pad + dx:pad + dx + w]
        out += np.einsum("oc,bchw->bohw", weight[:, :, k], shifted)
    return out + bias[None, :, None, None]


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def cci_loops(lmap, gmap, l_att_pre, g_att_pre):
    """Channel interaction from pre-sigmoid attention logits, written with explicit loops.

    ``lmap (Cc,H,W)``, ``gmap (Ct,H,W)``; ``l_att_pre (Cc,)``, ``g_att_pre (Ct,)``.
    Returns ``(L', G')``.
    """
    cc, ct = lmap.shape[0], gmap.shape[0]
    la = sigmoid(l_att_pre)
    ga = sigmoid(g_att_pre)
    r = np.zeros((cc, ct))
    for i in range(cc):
        for j in range(ct):
            r[i, j] = la[i] * ga[j]
    # L -> G: for each transformer channel j, weights over CNN channels i
    l_to_g = np.zeros_like(gmap)
    for j in range(ct):
        z = sum(np.exp(r[i, j]) for i in range(cc))
        for i in range(cc):
            l_to_g[j] += np.exp(r[i, j]) / z * lmap[i]
    g_to_l = np.zeros_like(lmap)
    for i in range(cc):
        z = sum(np.exp(r[i, j]) for j in range(ct))
        for j in range(ct):
            g_to_l[i] += np.exp(r[i, j]) / z * gmap[j]
    return g_to_l + lmap, l_to_g + gmap


def auc_pairwise(scores, labels):
    """Probability that a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    pos, neg = scores[labels], scores[~labels]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (pos.size * neg.size)
