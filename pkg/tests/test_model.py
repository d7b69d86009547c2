import dataclasses

import numpy as np
import pytest

from hwmamba.errors import ConfigError, DataError, DimensionError
from hwmamba.gradcheck import finite_diff_check
from hwmamba.model import (LOGIT_CLAMP, Classifier, Downsample, GatedMLP, HWMamba, HWMambaBlock, NetConfig,
                           PatchEmbed, ablation_configs, bce_with_logits, count_parameters)
from hwmamba.tensor import Tensor, no_grad


def perturb(module, rng, scale=0.3):
    for t in module.parameters():
        t.data = t.data + scale * rng.normal(size=t.shape)


class TestConfig:
    def test_defaults(self):
        cfg = NetConfig()
        assert cfg.depths == [2, 2, 2, 8] and cfg.dims == [48, 96, 192, 384]
        assert cfg.patch_kernel == (3, 16) and cfg.patch_stride == (1, 16) and cfg.down_stride == (1, 2)
        assert cfg.d_state == 16 and cfg.num_classes == 26 and not cfg.normalize_input and not cfg.d_skip

    def test_round_trip(self):
        cfg = NetConfig.micro(mlp_kind="plain")
        assert NetConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [dict(depths=[1, 1, 1]), dict(mlp_kind="wide"), dict(d_state=0),
                                     dict(input_length=250)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            NetConfig.micro(**bad)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            NetConfig.from_dict({"depth": [1]})

    def test_ablation_axes(self):
        rows = ablation_configs(NetConfig.micro())
        assert set(rows) == {"mlp", "stride_2_2", "stride_1_3", "norm", "state_dim_1", "proposed"}
        assert rows["mlp"].mlp_kind == "plain"
        assert rows["stride_2_2"].down_stride == (2, 2)
        assert rows["stride_1_3"].down_stride == (1, 3)
        assert rows["norm"].normalize_input
        assert rows["state_dim_1"].d_state == 1


class TestShapes:
    def test_patch_embed_geometry(self):
        pe = PatchEmbed(NetConfig(dims=[48, 2, 2, 2]))
        assert pe(Tensor(np.zeros((1, 1, 12, 8192)))).shape == (1, 12, 512, 48)

    def test_patch_embed_zero(self):
        pe = PatchEmbed(NetConfig.micro())
        assert not pe(Tensor(np.zeros((1, 1, 12, 256)))).data.any()

    def test_patch_embed_bad_width(self):
        with pytest.raises(DimensionError):
            PatchEmbed(NetConfig.micro())(Tensor(np.zeros((1, 1, 12, 250))))

    @pytest.mark.parametrize("c_in,w", [(48, 512), (192, 128)])
    def test_downsample_geometry(self, c_in, w):
        down = Downsample(c_in, 2 * c_in, NetConfig())
        assert down(Tensor(np.zeros((1, 12, w, c_in)))).shape == (1, 12, w // 2, 2 * c_in)

    def test_downsample_zero_weights(self, rng):
        cfg = NetConfig.micro()
        down = Downsample(4, 8, cfg)
        down.conv.weight.data[:] = 0
        down.norm.weight.data = rng.normal(size=8)
        out = down(Tensor(rng.normal(size=(1, 3, 8, 4)))).data
        np.testing.assert_array_equal(out, np.broadcast_to(down.norm.bias.data, out.shape))

    def test_downsample_odd_width(self):
        with pytest.raises(DimensionError):
            Downsample(4, 8, NetConfig.micro())(Tensor(np.zeros((1, 3, 7, 4))))

    def test_micro_trace(self, rng):
        model = HWMamba(NetConfig.micro())
        trace = []
        probs = model(rng.normal(size=(2, 12, 256)), trace=trace)
        assert trace == [(4, 12, 16), (8, 12, 8), (16, 12, 4), (32, 12, 2)]
        assert probs.shape == (2, 4)
        assert ((probs.data > 0) & (probs.data < 1)).all()


class TestBlocks:
    def test_zero_projections_give_identity(self, rng):
        block = HWMambaBlock(4, NetConfig.micro(), rng=rng)
        perturb(block, rng)
        block.mixer.out_proj.weight.data[:] = 0
        block.mixer.out_proj.bias.data[:] = 0
        block.mlp.fc_out.weight.data[:] = 0
        block.mlp.fc_out.bias.data[:] = 0
        x = rng.normal(size=(1, 3, 8, 4))
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_block_preserves_shape(self, rng):
        block = HWMambaBlock(6, NetConfig.micro(), rng=rng)
        assert block(Tensor(rng.normal(size=(2, 3, 5, 6)))).shape == (2, 3, 5, 6)

    @pytest.mark.parametrize("seed", range(3))
    def test_block_gradient(self, seed):
        rng = np.random.default_rng(seed)
        block = HWMambaBlock(4, NetConfig.micro(), rng=rng)
        perturb(block, rng)
        x = Tensor(rng.normal(size=(1, 3, 8, 4)), requires_grad=True)
        r = Tensor(rng.normal(size=(1, 3, 8, 4)))
        assert finite_diff_check(lambda _: (block(x) * r).sum(), [x] + block.parameters(), max_coords=4) < 1e-4

    def test_gate_closes(self, rng):
        mlp = GatedMLP(4, rng=rng)
        perturb(mlp, rng)
        mlp.fc_gate.weight.data[:] = 0
        mlp.fc_gate.bias.data[:] = -200.0
        out = mlp(Tensor(rng.normal(size=(3, 4)))).data
        np.testing.assert_allclose(out, np.broadcast_to(mlp.fc_out.bias.data, out.shape), atol=1e-12)

    def test_gated_mlp_zero_input(self, rng):
        assert not GatedMLP(4, rng=rng)(Tensor(np.zeros((2, 4)))).data.any()

    def test_gated_mlp_gradient(self, rng):
        mlp = GatedMLP(3, rng=rng)
        perturb(mlp, rng)
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        assert finite_diff_check(lambda _: (mlp(x) * mlp(x)).sum(), [x] + mlp.parameters()) < 1e-4

    def test_classifier_constant_map(self, rng):
        head = Classifier(4, 3, NetConfig.micro(), rng=rng)
        perturb(head, rng)
        values = rng.normal(size=4)
        feat = np.broadcast_to(values, (1, 2, 3, 4)).copy()
        mu, sd = values.mean(), np.sqrt(values.var() + 1e-5)
        pooled = (values - mu) / sd * head.norm.weight.data + head.norm.bias.data
        expected = pooled @ head.fc.weight.data + head.fc.bias.data
        np.testing.assert_allclose(head(Tensor(feat)).data[0], expected, atol=1e-12)


class TestNetwork:
    def test_deterministic(self, rng):
        x = rng.normal(size=(2, 12, 256))
        a = HWMamba(NetConfig.micro(), seed=3)(x).data
        b = HWMamba(NetConfig.micro(), seed=3)(x).data
        assert a.tobytes() == b.tobytes()

    def test_batch_independence(self, rng):
        model = HWMamba(NetConfig.micro(), seed=1, dtype=np.float32)
        x = rng.normal(size=(3, 12, 256)).astype(np.float32)
        batched = model.predict(x, batch_size=3)
        singles = np.concatenate([model.predict(x[i:i + 1]) for i in range(3)])
        assert np.abs(batched - singles).max() < 1e-6

    def test_parameter_count_is_stable_and_gate_sized(self):
        cfg = NetConfig.micro()
        gated = count_parameters(HWMamba(cfg, seed=0))
        assert gated == count_parameters(HWMamba(cfg, seed=9))
        plain = count_parameters(HWMamba(dataclasses.replace(cfg, mlp_kind="plain")))
        gate = sum(depth * (dim * 4 * dim + 4 * dim) for depth, dim in zip(cfg.depths, cfg.dims))
        assert gated - plain == gate

    def test_residual_surgery(self, rng):
        cfg = NetConfig.micro()
        model = HWMamba(cfg, seed=0)
        perturb(model, rng, 0.1)
        for blocks in model.stages:
            for block in blocks:
                for lin in (block.mixer.out_proj, block.mlp.fc_out):
                    lin.weight.data[:] = 0
                    lin.bias.data[:] = 0
        x = rng.normal(size=(1, 12, 256))
        h = model.patch_embed(model._prepare(x))
        for i in range(3):
            h = model.downsamples[i](h)
        np.testing.assert_allclose(model.forward_logits(x).data, model.head(h).data, atol=1e-12)

    def test_normalize_input_ignores_scale(self, rng):
        model = HWMamba(NetConfig.micro(normalize_input=True))
        x = rng.normal(size=(1, 12, 256))
        np.testing.assert_allclose(model(x).data, model(7.0 * x + 3.0).data, atol=1e-10)

    def test_wrong_lead_count(self, rng):
        with pytest.raises(DimensionError):
            HWMamba(NetConfig.micro())(rng.normal(size=(1, 11, 256)))

    def test_end_to_end_gradient(self, rng):
        model = HWMamba(NetConfig.micro(), seed=0)
        perturb(model, rng, 0.05)
        x = rng.normal(size=(4, 12, 256))
        y = (rng.random((4, 4)) < 0.5).astype(float)
        params = model.parameters()
        subset = [params[i] for i in rng.choice(len(params), size=12, replace=False)]
        err = finite_diff_check(lambda _: bce_with_logits(model.forward_logits(x), y), subset, max_coords=1)
        assert err < 1e-4


class TestLoss:
    def test_half_probability(self):
        assert bce_with_logits(Tensor(np.zeros((1, 26))), np.ones((1, 26))).item() == pytest.approx(np.log(2))

    def test_gradient_is_residual(self, rng):
        z = Tensor(rng.normal(size=(1, 26)), requires_grad=True)
        t = (rng.random((1, 26)) < 0.5).astype(float)
        bce_with_logits(z, t).backward()
        np.testing.assert_allclose(z.grad, (1 / (1 + np.exp(-z.data)) - t) / 26, atol=1e-15)
        assert finite_diff_check(lambda _: bce_with_logits(z, t), z) < 1e-8

    def test_saturation_is_finite_and_shrinking(self):
        t = np.array([[1.0, 0.0]])
        losses = [bce_with_logits(Tensor([[s, -s]]), t).item() for s in (5.0, 20.0, 1e4)]
        assert losses[0] > losses[1] > 0 and np.isfinite(losses[2])
        assert losses[2] == pytest.approx(np.log1p(np.exp(-LOGIT_CLAMP)))

    def test_rejects_soft_targets(self):
        with pytest.raises(DataError):
            bce_with_logits(Tensor(np.zeros((1, 2))), np.array([[0.5, 1.0]]))
