import numpy as np
import pytest

from dbkaunet.core import ShapeError, Tensor, gradcheck, ops
from dbkaunet.gradsuite import _check_margin, _kink_safe_offsets
from dbkaunet.geometric import (
    LDConv, bilinear_sample, conv2d, depthwise_conv2d, ldconv_forward, transposed_conv2d, xshape_pattern,
)

from oracles import (
    bilinear_point, conv2d_loop, depthwise_loop, ldconv_gather, ldconv_loop, transposed_conv_loop, xshape_points,
)


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def random_geometries(rng, count=24):
    out = []
    while len(out) < count:
        k = int(rng.integers(1, 6))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, k // 2 + 1))
        h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        out.append((int(rng.integers(1, 3)), cin, cout, h, w, k, s, p))
    return out


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 1, 5, 5))
        np.testing.assert_array_equal(conv2d(t(x), t(np.ones((1, 1, 1, 1))), t([0.0])).data, x)

    def test_all_ones(self):
        assert conv2d(t(np.ones((1, 3, 3))), t(np.ones((1, 1, 3, 3)))).data.item() == 9.0

    def test_stem_shape(self, rng):
        y = conv2d(t(rng.normal(size=(1, 64, 64))), t(rng.normal(size=(4, 1, 7, 7))), stride=2, padding=3)
        assert y.shape == (4, 32, 32)

    def test_matches_loop_oracle_on_random_geometries(self, rng):
        for b, cin, cout, h, w, k, s, p in random_geometries(rng):
            x, wt = rng.normal(size=(b, cin, h, w)), rng.normal(size=(cout, cin, k, k))
            np.testing.assert_allclose(conv2d(t(x), t(wt), stride=s, padding=p).data,
                                       conv2d_loop(x, wt, s, p), rtol=0, atol=1e-10)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            conv2d(t(np.ones((1, 1, 2, 2))), t(np.ones((1, 1, 3, 3))))

    def test_gradcheck(self, rng):
        x, w, b = t(rng.normal(size=(2, 2, 5, 5)), True), t(rng.normal(size=(3, 2, 3, 3)), True), t(rng.normal(size=3), True)
        assert gradcheck(lambda: ops.sum(conv2d(x, w, b, 2, 1) ** 2), [x, w, b]) < 1e-5


class TestDepthwise:
    def test_per_channel_scaling(self):
        y = depthwise_conv2d(t(np.ones((2, 3, 3))), t(np.array([2.0, 3.0]).reshape(2, 1, 1, 1))).data
        np.testing.assert_array_equal(y[0], 2.0)
        np.testing.assert_array_equal(y[1], 3.0)

    def test_equals_block_diagonal_conv(self, rng):
        x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(3, 1, 3, 3))
        full = np.zeros((3, 3, 3, 3))
        for c in range(3):
            full[c, c] = w[c, 0]
        np.testing.assert_allclose(depthwise_conv2d(t(x), t(w), padding=1).data,
                                   conv2d(t(x), t(full), padding=1).data, rtol=0, atol=1e-12)

    def test_matches_loop_oracle_on_random_geometries(self, rng):
        for b, c, _, h, w, k, s, p in random_geometries(rng):
            x, wt = rng.normal(size=(b, c, h, w)), rng.normal(size=(c, 1, k, k))
            np.testing.assert_allclose(depthwise_conv2d(t(x), t(wt), stride=s, padding=p).data,
                                       depthwise_loop(x, wt, s, p), rtol=0, atol=1e-10)

    def test_group_violation(self):
        with pytest.raises(ShapeError):
            depthwise_conv2d(t(np.ones((1, 3, 4, 4))), t(np.ones((2, 1, 3, 3))))

    def test_gradcheck(self, rng):
        x, w = t(rng.normal(size=(1, 2, 6, 6)), True), t(rng.normal(size=(2, 1, 3, 3)), True)
        assert gradcheck(lambda: ops.sum(depthwise_conv2d(x, w, padding=1) ** 2), [x, w]) < 1e-5


class TestTransposedConv:
    def test_single_tap(self, rng):
        k = rng.normal(size=(1, 1, 2, 2))
        np.testing.assert_allclose(transposed_conv2d(t([[[[3.0]]]]), t(k), stride=2).data, 3.0 * k, rtol=1e-15)

    def test_doubles_spatial_size(self, rng):
        assert transposed_conv2d(t(rng.normal(size=(1, 2, 8, 8))), t(rng.normal(size=(2, 3, 2, 2))), stride=2).shape == (1, 3, 16, 16)

    def test_matches_loop_oracle_on_random_geometries(self, rng):
        for b, cin, cout, h, w, k, s, p in random_geometries(rng):
            p = min(p, (k - 1) // 2)
            x, wt = rng.normal(size=(b, cin, h, w)), rng.normal(size=(cin, cout, k, k))
            np.testing.assert_allclose(transposed_conv2d(t(x), t(wt), stride=s, padding=p).data,
                                       transposed_conv_loop(x, wt, s, p), rtol=0, atol=1e-10)

    def test_adjoint_identity(self, rng):
        x, w = rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 3, 3))
        y = rng.normal(size=(1, 1, 4, 4))
        lhs = np.sum(conv2d(t(x), t(w), padding=1).data * y)
        rhs = np.sum(x * transposed_conv2d(t(y), t(w), padding=1).data)
        assert abs(lhs - rhs) < 1e-10

    def test_adjoint_identity_on_random_geometries(self, rng):
        for b, cin, cout, h, _, k, s, p in random_geometries(rng):
            # square inputs so one output_padding restores the rows a strided conv skips
            x, wt = rng.normal(size=(b, cin, h, h)), rng.normal(size=(cout, cin, k, k))
            fwd = conv2d(t(x), t(wt), stride=s, padding=p).data
            y = rng.normal(size=fwd.shape)
            extra = h + 2 * p - k - (fwd.shape[2] - 1) * s
            back = transposed_conv2d(t(y), t(wt), stride=s, padding=p, output_padding=extra).data
            assert back.shape == x.shape
            lhs, rhs = np.sum(fwd * y), np.sum(x * back)
            assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            transposed_conv2d(t(np.ones((1, 1, 2, 2))), t(np.ones((1, 1, 2, 2))), stride=0)

    def test_gradcheck(self, rng):
        x, w = t(rng.normal(size=(1, 2, 3, 3)), True), t(rng.normal(size=(2, 2, 2, 2)), True)
        assert gradcheck(lambda: ops.sum(transposed_conv2d(x, w, stride=2) ** 2), [x, w]) < 1e-5


class TestXPattern:
    def test_endpoints_and_count(self):
        pts = xshape_pattern().base_points
        assert len(pts) == 20 and len(set(pts)) == 20
        assert {(0, 0), (9, 9), (0, 9), (9, 0)} <= set(pts)

    def test_order(self):
        assert list(xshape_pattern().base_points) == xshape_points()

    def test_transpose_invariance(self):
        pts = set(xshape_pattern().base_points)
        assert {(j, i) for i, j in pts} == pts


class TestBilinear:
    def test_integer_coordinate_is_exact(self, rng):
        x = rng.normal(size=(2, 5, 6))
        np.testing.assert_array_equal(bilinear_sample(t(x), t([[2.0, 3.0]])).data[:, 0], x[:, 2, 3])

    def test_midpoint_is_corner_mean(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert bilinear_sample(t(x), t([[0.5, 0.5]])).data.item() == 2.5

    def test_outside_reads_zero(self):
        x = np.ones((1, 3, 3))
        np.testing.assert_array_equal(bilinear_sample(t(x), t([[-5.0, 0.0], [0.0, 7.0]])).data, 0.0)
        assert bilinear_sample(t(x), t([[-0.5, 1.0]])).data.item() == 0.5

    def test_matches_scalar_oracle(self, rng):
        x = rng.normal(size=(3, 6, 7))
        coords = rng.uniform(-1.5, 7.5, size=(30, 2))
        expect = np.array([[bilinear_point(x[c], *pt) for pt in coords] for c in range(3)])
        np.testing.assert_allclose(bilinear_sample(t(x), t(coords)).data, expect, rtol=0, atol=1e-13)

    def test_continuity(self, rng):
        x = rng.normal(size=(2, 6, 6))
        coords = rng.uniform(0, 5, size=(50, 2))
        a = bilinear_sample(t(x), t(coords)).data
        b = bilinear_sample(t(x), t(coords + 1e-9)).data
        assert np.max(np.abs(a - b)) < 1e-6 * np.max(np.abs(x))

    def test_gradcheck_coordinates_and_input(self, rng):
        x = t(rng.normal(size=(2, 5, 5)), True)
        coords = t(rng.uniform(0.1, 3.9, size=(8, 2)) + 0.013, True)
        w = rng.normal(size=(2, 8))
        assert gradcheck(lambda: ops.sum(bilinear_sample(x, coords) * w), [x, coords]) < 1e-4


class TestLDConv:
    def test_zero_offsets_equal_integer_gather_bitwise(self, rng):
        layer = LDConv(1, 1, rng)
        layer.weight.data[:] = 1.0
        x = rng.integers(-8, 8, size=(1, 1, 12, 12)).astype(np.float64)
        points = xshape_points()
        expect = ldconv_gather(x, layer.weight.data, layer.bias.data, points, (4, 4))
        np.testing.assert_array_equal(ldconv_forward(t(x), layer).data, expect)

    def test_zero_offsets_random_weights(self, rng):
        layer = LDConv(2, 3, rng)
        x = rng.normal(size=(2, 2, 9, 11))
        expect = ldconv_gather(x, layer.weight.data, layer.bias.data, xshape_points(), (4, 4))
        np.testing.assert_allclose(layer(t(x)).data, expect, rtol=0, atol=1e-12)

    def test_random_offsets_match_loop_oracle(self, rng):
        layer = LDConv(1, 2, rng)
        layer.offset_weight.data[:] = rng.normal(0, 0.3, layer.offset_weight.shape)
        layer.offset_bias.data[:] = rng.normal(0, 1.0, layer.offset_bias.shape)
        layer.bias.data[:] = rng.normal(size=2)
        x = rng.normal(size=(1, 1, 12, 12))
        offsets = layer.offsets(t(x)).data
        expect = ldconv_loop(x, layer.weight.data, layer.bias.data, offsets, xshape_points(), (4.0, 4.0))
        np.testing.assert_allclose(ldconv_forward(t(x), layer).data, expect, rtol=0, atol=1e-10)

    def test_same_spatial_size(self, rng):
        assert LDConv(3, 5, rng)(t(rng.normal(size=(3, 7, 9)))).shape == (5, 7, 9)

    def test_offset_channel_mismatch(self, rng):
        layer = LDConv(1, 1, rng)
        with pytest.raises(ShapeError):
            layer.sampling_coords(t(np.zeros((1, 38, 4, 4))))

    def test_gradcheck(self, rng):
        # offsets kept off integer coordinates, where bilinear sampling has kinks
        layer = _kink_safe_offsets(LDConv(2, 2, rng), rng)
        x = t(rng.normal(size=(1, 2, 6, 6)), True)
        _check_margin(layer, x)
        w = rng.normal(size=(1, 2, 6, 6))
        err = gradcheck(lambda: ops.sum(layer(x) * w), [x] + layer.parameters(), max_elements=150)
        assert err < 1e-4
