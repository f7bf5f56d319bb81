import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbkaunet.core import ShapeError, Tensor, gradcheck, ops
from dbkaunet.network import (
    ABLATIONS, AdamW, DBKAUNet, KATBlock, MultiHeadSelfAttention, NetworkConfig, ResidualBlock,
    TransformerStage, ViTBlock, build_model, clip_grad_norm, composite_loss, cosine_lr, train_step,
)


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def tiny(ablation="H", **kw):
    return NetworkConfig.ablation(ablation, base_channels=kw.pop("base_channels", 4), **kw)


class TestResidualBlock:
    def test_zero_weights_give_relu_of_input(self, rng):
        block = ResidualBlock(3, 3, rng)
        block.conv1.weight.data[:] = 0.0
        block.conv2.weight.data[:] = 0.0
        x = rng.normal(size=(2, 3, 5, 5))
        np.testing.assert_allclose(block(t(x)).data, np.maximum(x, 0.0), rtol=0, atol=1e-12)

    def test_projection_when_downsampling(self, rng):
        block = ResidualBlock(3, 6, rng, stride=2)
        assert block.proj is not None
        assert block(t(rng.normal(size=(1, 3, 8, 8)))).shape == (1, 6, 4, 4)

    def test_output_nonnegative(self, rng):
        assert np.all(ResidualBlock(2, 2, rng)(t(rng.normal(size=(2, 2, 4, 4)))).data >= 0)


class TestAttention:
    def test_single_token_returns_projected_value(self, rng):
        attn = MultiHeadSelfAttention(4, 2, rng)
        x = rng.normal(size=(1, 1, 4))
        v = x[0] @ attn.qkv.weight.data[8:].T + attn.v_bias.data
        expect = v @ attn.proj.weight.data.T + attn.proj.bias.data
        np.testing.assert_allclose(attn(t(x)).data[0], expect, rtol=0, atol=1e-14)

    def test_weights_are_row_distributions(self, rng):
        a = MultiHeadSelfAttention(8, 4, rng).attention_weights(t(rng.normal(size=(2, 6, 8)))).data
        assert a.shape == (2, 4, 6, 6)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_matches_per_head_loops(self, rng):
        attn = MultiHeadSelfAttention(4, 2, rng)
        attn.q_bias.data[:] = rng.normal(size=4)
        attn.v_bias.data[:] = rng.normal(size=4)
        x = rng.normal(size=(5, 4))
        wq, wk, wv = np.split(attn.qkv.weight.data, 3)
        q, k, v = x @ wq.T + attn.q_bias.data, x @ wk.T, x @ wv.T + attn.v_bias.data
        heads = []
        for h in range(2):
            sl = slice(2 * h, 2 * h + 2)
            s = q[:, sl] @ k[:, sl].T / math.sqrt(2)
            a = np.exp(s - s.max(axis=1, keepdims=True))
            heads.append(a / a.sum(axis=1, keepdims=True) @ v[:, sl])
        expect = np.concatenate(heads, axis=1) @ attn.proj.weight.data.T + attn.proj.bias.data
        np.testing.assert_allclose(attn(t(x[None])).data[0], expect, rtol=0, atol=1e-12)

    def test_heads_must_divide_dim(self, rng):
        with pytest.raises(ShapeError):
            MultiHeadSelfAttention(6, 4, rng)

    def test_gradcheck(self, rng):
        attn = MultiHeadSelfAttention(4, 2, rng)
        x = t(rng.normal(size=(1, 3, 4)), True)
        w = rng.normal(size=(1, 3, 4))
        assert gradcheck(lambda: ops.sum(attn(x) * w), [x] + attn.parameters(), max_elements=60) < 1e-4


class TestBlocks:
    def test_kat_with_identity_rationals_equals_linear_mlp_vit(self, rng):
        kat = KATBlock(8, 2, rng, init="identity")
        vit = ViTBlock(8, 2, rng, activation=None)
        for name in ("norm1", "attn", "norm2"):
            getattr(vit, name).load_state_dict(getattr(kat, name).state_dict())
        vit.mlp.fc1.load_state_dict(kat.kan1.linear.state_dict())
        vit.mlp.fc2.load_state_dict(kat.kan2.linear.state_dict())
        x = t(rng.normal(size=(2, 5, 8)))
        np.testing.assert_allclose(kat(x).data, vit(x).data, rtol=0, atol=1e-6)

    def test_shape_preserved(self, rng):
        x = t(rng.normal(size=(2, 7, 8)))
        assert ViTBlock(8, 2, rng)(x).shape == (2, 7, 8)
        assert KATBlock(8, 2, rng)(x).shape == (2, 7, 8)

    def test_stage_halves_resolution(self, rng):
        assert TransformerStage(3, 8, 2, rng)(t(rng.normal(size=(1, 3, 8, 8)))).shape == (1, 8, 4, 4)

    def test_unknown_stage_kind(self, rng):
        with pytest.raises(ValueError):
            TransformerStage(3, 8, 2, rng, kind="conv")


class TestEncoder:
    def test_skip_sizes_full_model(self):
        model = DBKAUNet(tiny("H"), seed=0)
        state = model.encoder(t(np.random.default_rng(0).normal(size=(1, 1, 64, 64))))
        assert [s.shape[-1] for s in state.skip_outputs] == [32, 16, 8, 4, 2]
        assert [s.shape[1] for s in state.skip_outputs] == model.encoder.skip_channels()

    def test_without_fusion_skips_are_concatenations(self, rng):
        cfg = tiny("D")
        model = DBKAUNet(cfg, seed=0)
        state = model.encoder(t(rng.normal(size=(1, 1, 32, 32))))
        for i in range(1, 5):
            np.testing.assert_array_equal(
                state.skip_outputs[i].data,
                np.concatenate([state.cnn_features[i].data, state.transformer_features[i].data], axis=1))
        assert model.encoder.skip_channels()[1:] == [cfg.cnn_channels[i] + cfg.trans_dims[i - 1] for i in range(1, 5)]

    def test_cnn_only_has_no_transformer_maps(self, rng):
        state = DBKAUNet(tiny("A"), seed=0).encoder(t(rng.normal(size=(1, 1, 32, 32))))
        assert all(g is None for g in state.transformer_features)

    def test_rejects_indivisible_size(self, rng):
        with pytest.raises(ShapeError):
            DBKAUNet(tiny("A"), seed=0)(t(rng.normal(size=(1, 1, 48, 48))))


class TestModel:
    @pytest.mark.parametrize("ablation", sorted(ABLATIONS))
    def test_output_is_probability_map(self, ablation, rng):
        p = DBKAUNet(tiny(ablation), seed=1)(t(rng.normal(size=(2, 1, 32, 32)))).data
        assert p.shape == (2, 32, 32)
        assert np.all((p >= 0) & (p <= 1))

    def test_unbatched_input(self, rng):
        assert DBKAUNet(tiny("B"), seed=0)(t(rng.normal(size=(1, 32, 32)))).shape == (1, 32, 32)

    def test_same_seed_same_output(self, rng):
        x = t(rng.normal(size=(1, 1, 32, 32)))
        a = DBKAUNet(tiny("H"), seed=3).eval()(x).data
        b = DBKAUNet(tiny("H"), seed=3).eval()(x).data
        np.testing.assert_array_equal(a, b)

    def test_decoder_alternates_kan_and_cnn(self):
        assert DBKAUNet(tiny("H"), seed=0).decoder.kinds == ["kan", "cnn", "kan", "cnn", "kan"]
        assert DBKAUNet(tiny("B"), seed=0).decoder.kinds == ["cnn"] * 5

    def test_config_round_trip(self):
        cfg = tiny("F", grid_intervals=7)
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            NetworkConfig(use_sfe=False, use_gaf=True)
        with pytest.raises(ValueError):
            NetworkConfig.ablation("Z")
        with pytest.raises(ValueError):
            NetworkConfig.from_dict({"depth": 3})


class TestLoss:
    def test_hand_case(self):
        loss = composite_loss(t([[0.5, 0.5]]), np.array([[1.0, 0.0]])).item()
        # CE = ln 2, Dice = 1 - (2*0.5 + 1)/(1 + 1 + 1) = 1/3
        assert abs(loss - (0.5 * math.log(2) + 0.5 / 3)) < 1e-12

    def test_alpha_endpoints(self, rng):
        p = rng.uniform(0.05, 0.95, size=(2, 4, 4))
        y = (rng.random((2, 4, 4)) > 0.5).astype(float)
        ce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        dice = 1 - (2 * np.sum(p * y) + 1) / (p.sum() + y.sum() + 1)
        assert abs(composite_loss(t(p), y, alpha=1.0).item() - ce) < 1e-12
        assert abs(composite_loss(t(p), y, alpha=0.0).item() - dice) < 1e-12
        assert abs(composite_loss(t(p), y, alpha=0.3).item() - (0.3 * ce + 0.7 * dice)) < 1e-12

    def test_saturated_prediction_is_finite(self):
        assert np.isfinite(composite_loss(t([[0.0, 1.0]]), np.array([[1.0, 0.0]])).item())

    def test_perfect_prediction_near_zero(self):
        assert composite_loss(t([[1.0, 0.0]]), np.array([[1.0, 0.0]])).item() < 1e-6

    def test_rejects_bad_targets(self):
        with pytest.raises(ValueError):
            composite_loss(t([[0.5]]), np.array([[0.5]]))
        with pytest.raises(ShapeError):
            composite_loss(t([[0.5, 0.5]]), np.array([[1.0]]))
        with pytest.raises(ValueError):
            composite_loss(t([[0.5]]), np.array([[1.0]]), alpha=1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
    def test_bounded_below_by_zero(self, alpha, seed):
        r = np.random.default_rng(seed)
        p = r.uniform(0, 1, size=(3, 3))
        y = (r.random((3, 3)) > 0.5).astype(float)
        assert composite_loss(t(p), y, alpha=alpha).item() >= 0.0

    def test_gradcheck(self, rng):
        p = t(rng.uniform(0.1, 0.9, size=(2, 3, 3)), True)
        y = (rng.random((2, 3, 3)) > 0.5).astype(float)
        assert gradcheck(lambda: composite_loss(p, y), p) < 1e-5


class TestOptimization:
    def test_clip_rescales_to_max_norm(self):
        a, b = t(np.zeros(2), True), t(np.zeros(1), True)
        a.grad, b.grad = np.array([30.0, 0.0]), np.array([40.0])
        assert clip_grad_norm([a, b], 5.0) == 50.0
        np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [3.0, 0.0, 4.0], rtol=1e-15)

    def test_clip_leaves_small_gradients(self):
        a = t(np.zeros(2), True)
        a.grad = np.array([1.0, 1.0])
        clip_grad_norm([a], 5.0)
        np.testing.assert_array_equal(a.grad, [1.0, 1.0])

    def test_cosine_endpoints(self):
        assert cosine_lr(0, 100, 5e-4) == 5e-4
        assert abs(cosine_lr(50, 100, 5e-4) - 2.5e-4) < 1e-18
        assert cosine_lr(100, 100, 5e-4) == 0.0
        lrs = [cosine_lr(s, 100) for s in range(101)]
        assert all(x >= y for x, y in zip(lrs, lrs[1:]))

    def test_adamw_first_step_moves_by_lr(self):
        p = t([3.0, -2.0], True)
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        p.grad = np.array([6.0, -4.0])
        opt.step()
        np.testing.assert_allclose(p.data, [2.9, -1.9], rtol=0, atol=1e-8)

    def test_adamw_decoupled_decay(self):
        p = t([2.0], True)
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(1)
        opt.step()
        assert abs(p.data[0] - 2.0 * (1 - 0.05)) < 1e-15

    def test_adamw_minimizes_quadratic(self):
        p = t([3.0, -2.0], True)
        opt = AdamW([p], lr=0.05, weight_decay=0.0)
        for _ in range(500):
            p.grad = 2 * p.data
            opt.step()
        assert np.max(np.abs(p.data)) < 1e-2

    def test_train_step_decreases_loss(self, rng):
        model = build_model("H", seed=0, base_channels=4)
        x = rng.normal(size=(2, 1, 32, 32))
        y = (rng.random((2, 32, 32)) > 0.7).astype(float)
        opt = AdamW(model.parameters(), lr=1e-3)
        losses = [train_step(model, (x, y), opt).loss for _ in range(50)]
        drops = sum(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]
        assert drops >= 40

    def test_every_parameter_receives_gradient(self, rng):
        model = build_model("H", seed=0, base_channels=4)
        opt = AdamW(model.parameters(), lr=1e-3)
        x, y = rng.normal(size=(1, 1, 64, 64)), (rng.random((1, 64, 64)) > 0.7).astype(float)
        train_step(model, (x, y), opt)
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            # position attention starts gated off by its zero residual scale
            gated = ".pam_" in name and ".scale" not in name
            assert gated or np.any(p.grad != 0), name
