import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dbkaunet.core import (
    BatchNorm2d, LayerNorm, Linear, NonFiniteError, Parameter, ShapeError, Tensor, gradcheck, no_grad, ops,
)
from dbkaunet.gradsuite import default_registry, run_case


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(leaf([0.0])).item() == 0.5

    def test_silu_value_and_slope_at_zero(self):
        x = leaf([0.0])
        y = ops.silu(x)
        y.backward(np.ones(1))
        assert y.item() == 0.0
        assert x.grad[0] == 0.5

    def test_gelu_matches_extended_precision_erf(self):
        xs = [-1.0, 0.0, 1.0]
        mpmath.mp.dps = 40
        expected = [float(mpmath.mpf(0.5) * x * (1 + mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2)))) for x in xs]
        np.testing.assert_allclose(ops.gelu(leaf(xs)).data, expected, rtol=0, atol=1e-15)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
            ops.add(leaf(np.ones((2, 3))), leaf(np.ones(4)))

    def test_scalar_broadcast(self):
        y = ops.elementwise("mul", leaf(np.ones((2, 3))), leaf(2.0))
        np.testing.assert_array_equal(y.data, np.full((2, 3), 2.0))

    def test_dispatch_scale(self):
        np.testing.assert_array_equal(ops.elementwise("scale", leaf([1.0, -2.0]), factor=3.0).data, [3.0, -6.0])

    def test_fan_out_accumulates(self):
        x = leaf([1.5])
        (x + x).backward(np.ones(1))
        assert x.grad[0] == 2.0


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(ops.matmul(leaf(np.eye(3)), leaf(m)).data, m)

    def test_hand_case(self):
        np.testing.assert_array_equal(ops.matmul(leaf([[1, 2], [3, 4]]), leaf([[5], [6]])).data, [[17], [39]])

    def test_gradcheck(self, rng):
        a, b = leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(3, 2)))
        assert gradcheck(lambda: ops.sum(ops.matmul(a, b) ** 2), [a, b]) < 1e-6

    def test_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ops.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax(leaf([2.0, 2.0, 2.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_large_gap_does_not_overflow(self):
        y = ops.softmax(leaf([1000.0, 0.0])).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, [1.0, 0.0], atol=1e-300)

    def test_rows_sum_to_one(self, rng):
        y = ops.softmax(leaf(rng.normal(size=(5, 7))), dim=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-1e4, 1e4)))
    def test_slices_sum_to_one_for_any_finite_input(self, x):
        for dim in (0, 1):
            y = ops.softmax(leaf(x), dim=dim).data
            assert np.all(y >= 0)
            np.testing.assert_allclose(y.sum(axis=dim), 1.0, rtol=0, atol=1e-9)

    def test_invalid_axis(self):
        with pytest.raises(IndexError):
            ops.softmax(leaf(np.ones((2, 2))), dim=2)


class TestPooling:
    def test_constant_map(self):
        y = ops.adaptive_avg_pool_to_1(leaf(np.full((2, 3, 3), 3.0)))
        assert y.shape == (2, 1, 1)
        np.testing.assert_array_equal(y.data, 3.0)

    def test_hand_mean(self):
        assert ops.adaptive_avg_pool_to_1(leaf([[[1, 2], [3, 4]]])).item() == 2.5

    def test_gradient_is_uniform(self):
        x = leaf(np.ones((1, 3, 4)))
        ops.adaptive_avg_pool_to_1(x).backward(np.ones((1, 1, 1)))
        np.testing.assert_allclose(x.grad, 1.0 / 12, rtol=0, atol=1e-17)

    def test_zero_extent(self):
        with pytest.raises(ShapeError):
            ops.adaptive_avg_pool_to_1(leaf(np.ones((2, 0, 3))))


class TestNormalization:
    def test_batchnorm_identity_on_normalized_data(self, rng):
        x = rng.normal(size=(4, 3, 5, 5))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        # epsilon 1e-5 in the variance shrinks the output by about 5e-6
        np.testing.assert_allclose(BatchNorm2d(3)(leaf(x)).data, x, rtol=1e-5, atol=1e-12)

    def test_batchnorm_constant_input_gives_beta(self):
        bn = BatchNorm2d(3)
        bn.bias.data[:] = [0.5, -1.0, 2.0]
        y = bn(leaf(np.full((2, 3, 4, 4), 7.0))).data
        np.testing.assert_allclose(y, np.broadcast_to(bn.bias.data[None, :, None, None], y.shape), atol=1e-12)

    def test_batchnorm_running_stats_and_eval(self, rng):
        bn = BatchNorm2d(2)
        x = rng.normal(3.0, 2.0, size=(8, 2, 4, 4))
        bn(leaf(x))
        running = bn._buffers
        np.testing.assert_allclose(running["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
        bn.eval()
        y = bn(leaf(x)).data
        mu, var = running["running_mean"][None, :, None, None], running["running_var"][None, :, None, None]
        expect = (x - mu) / np.sqrt(var + 1e-5)
        np.testing.assert_allclose(y, expect, rtol=1e-12)

    def test_batchnorm_gradcheck(self, rng):
        bn = BatchNorm2d(3)
        bn.weight.data[:] = rng.uniform(0.5, 1.5, 3)
        x = leaf(rng.normal(size=(2, 3, 4, 4)))
        w = rng.normal(size=(2, 3, 4, 4))
        assert gradcheck(lambda: ops.sum(bn(x) * w), [x, bn.weight, bn.bias]) < 1e-5

    def test_batchnorm_parameter_mismatch(self):
        with pytest.raises(ShapeError):
            BatchNorm2d(4)(leaf(np.ones((1, 3, 2, 2))))

    def test_layernorm_gradcheck(self, rng):
        ln = LayerNorm(5)
        x = leaf(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        assert gradcheck(lambda: ops.sum(ln(x) * w), [x, ln.weight, ln.bias]) < 1e-5


class TestGradcheck:
    def test_quadratic(self):
        x = Tensor([3.0])
        # relative 1e-9 at a gradient of 6 keeps the numeric value within 6 +/- 1e-8
        assert gradcheck(lambda: ops.sum(x * x), x) < 1e-9
        x.requires_grad = True
        ops.sum(x * x).backward()
        assert abs(x.grad[0] - 6.0) < 1e-8

    def test_linear_gradient_is_exactly_one(self, rng):
        x = leaf(rng.normal(size=(3, 4)))
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_two_layer_net_with_loss(self, rng):
        from dbkaunet.network import composite_loss

        l1, l2 = Linear(4, 6, rng), Linear(6, 1, rng)
        x = Tensor(rng.normal(size=(8, 4)))
        t = (rng.random((8, 1)) > 0.5).astype(np.float64)
        params = l1.parameters() + l2.parameters()
        err = gradcheck(lambda: composite_loss(ops.sigmoid(l2(ops.tanh(l1(x)))), t), params)
        assert err < 1e-5

    def test_eps_bounds(self):
        with pytest.raises(ValueError):
            gradcheck(lambda: ops.sum(leaf([1.0])), leaf([1.0]), eps=1e-2)

    def test_non_finite_is_reported_with_op(self):
        x = leaf([-1.0])
        with pytest.raises(NonFiniteError, match="sqrt"):
            gradcheck(lambda: ops.sum(ops.sqrt(x)), x)

    def test_restores_requires_grad(self):
        x = Tensor([1.0, 2.0])
        gradcheck(lambda: ops.sum(x * x), x)
        assert not x.requires_grad and x.grad is None

    def test_every_primitive_on_three_shapes(self):
        cases = [c for c in default_registry() if c.kind == "primitive"]
        assert len(cases) >= 30
        for case in cases:
            res = run_case(case, seed=0)
            assert res.passed, f"{case.name}: {res.max_error:.2e} {res.error or ''}"


class TestTape:
    def test_no_grad_forward_is_bitwise_identical(self, rng):
        lin = Linear(5, 3, rng)
        x = Tensor(rng.normal(size=(4, 5)))
        a = ops.gelu(lin(x)).data
        with no_grad():
            b = ops.gelu(lin(x))
        np.testing.assert_array_equal(a, b.data)
        assert b.is_leaf

    def test_every_reachable_parameter_gets_grad(self, rng):
        lin1, lin2 = Linear(3, 4, rng), Linear(4, 2, rng)
        y = ops.sum(lin2(ops.relu(lin1(Tensor(rng.normal(size=(2, 3)))))))
        y.backward()
        for p in lin1.parameters() + lin2.parameters():
            assert p.grad is not None and p.grad.shape == p.shape

    def test_topological_order_inputs_first(self, rng):
        a = leaf(rng.normal(size=3))
        b = ops.exp(a)
        c = ops.mul(a, b)
        order = c.topological_order()
        pos = {id(t): i for i, t in enumerate(order)}
        assert pos[id(a)] < pos[id(b)] < pos[id(c)]
        assert len(order) == len({id(t) for t in order})

    def test_parameter_requires_grad(self):
        assert Parameter(np.zeros(2)).requires_grad
        assert not Tensor(np.zeros(2)).requires_grad
