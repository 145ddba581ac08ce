import numpy as np
import pytest
import torch

from psfnet.errors import ConfigurationError
from psfnet.model import (
    DAB,
    PSFB,
    RDAB,
    SFFB,
    FusionNetwork,
    ModelConfig,
    PSFNet,
    ReconstructionNetwork,
    SumFusion,
    load_checkpoint,
    save_checkpoint,
)

from oracles.brute import convex_combination


def rand_inputs(h=16, w=16, batch=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.rand(batch, 6, h, w, generator=g) for _ in range(3)]


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestConfig:
    def test_defaults(self):
        c = ModelConfig()
        assert (c.channels, c.num_psfb, c.num_rdab, c.fusion_mode) == (64, 6, 4, "sffb")

    @pytest.mark.parametrize("kw", [
        {"channels": 0}, {"num_psfb": -1}, {"num_rdab": -1}, {"sffb_reduction": 3},
        {"fusion_mode": "max"}, {"z0_reference": "other"}, {"spatial_kernel": 4},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            ModelConfig(**kw)

    def test_dict_round_trip(self):
        c = ModelConfig(channels=16, fusion_mode="summation")
        assert ModelConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({"width": 3})


class TestExtraction:
    def test_shapes(self):
        net = FusionNetwork(ModelConfig(channels=64, num_psfb=0))
        feats = net.extract_features(rand_inputs(64, 64))
        assert [f.shape for f in feats] == [(1, 64, 64, 64)] * 3

    def test_shared_weights(self):
        net = FusionNetwork(ModelConfig(channels=8, num_psfb=0))
        x = rand_inputs()[0]
        f1, f2, f3 = net.extract_features([x, x.clone(), x.clone()])
        assert torch.equal(f1, f2) and torch.equal(f2, f3)

    def test_width_from_config(self):
        net = FusionNetwork(ModelConfig(channels=32, num_psfb=0))
        assert net.extract_features(rand_inputs())[0].shape[1] == 32

    def test_channel_mismatch(self):
        net = FusionNetwork(ModelConfig(channels=8))
        with pytest.raises(ConfigurationError):
            net.extract_features([torch.rand(1, 5, 8, 8)] * 3)


class TestSFFB:
    def test_attention_normalized(self):
        sffb = SFFB(16, 4)
        feats = [torch.randn(2, 16, 8, 8) for _ in range(3)]
        out, a = sffb(feats, return_attention=True)
        assert a.shape == (2, 3, 16)
        assert torch.allclose(a.sum(1), torch.ones(2, 16), atol=1e-6)
        assert ((a > 0) & (a < 1)).all()

    def test_identical_branches(self):
        sffb = SFFB(16, 4)
        b = torch.randn(1, 16, 8, 8)
        torch.testing.assert_close(sffb([b, b, b]), b, rtol=0, atol=1e-6)

    def test_saturated_branch_matches_convex_oracle(self):
        sffb = SFFB(8, 2)
        with torch.no_grad():
            sffb.fc2.weight.zero_()
            sffb.fc2.bias.zero_()
            sffb.fc2.bias[:8] = 40.0
        feats = [torch.randn(1, 8, 5, 5, dtype=torch.float64) for _ in range(3)]
        sffb.double()
        out, a = sffb(feats, return_attention=True)
        expected = convex_combination([f[0].numpy() for f in feats], a[0].detach().numpy())
        np.testing.assert_allclose(out[0].detach().numpy(), expected, atol=1e-12)
        np.testing.assert_allclose(out[0].detach().numpy(), feats[0][0].numpy(), atol=1e-12)

    def test_pointwise_bounds(self):
        sffb = SFFB(8, 2)
        feats = [torch.randn(1, 8, 6, 6) for _ in range(3)]
        out = sffb(feats)
        stack = torch.stack(feats)
        assert (out <= stack.max(0).values + 1e-6).all()
        assert (out >= stack.min(0).values - 1e-6).all()

    def test_summation_and_sffb_agree_on_equal_branches(self):
        b = torch.randn(1, 8, 4, 4)
        # summation returns 3b, selective fusion returns b; both reduce to the input up to scale
        torch.testing.assert_close(SumFusion()([b, b, b]) / 3, SFFB(8, 2)([b, b, b]), atol=1e-6, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            SFFB(8, 2)([torch.randn(1, 8, 4, 4), torch.randn(1, 8, 4, 5), torch.randn(1, 8, 4, 4)])


class TestPSFB:
    @pytest.mark.parametrize("mode", ["sffb", "summation", "concatenation"])
    @pytest.mark.parametrize("n,h,w", [(8, 5, 7), (16, 12, 12)])
    def test_shape_fixpoint(self, mode, n, h, w):
        block = PSFB(ModelConfig(channels=n, fusion_mode=mode, sffb_reduction=4))
        feats = [torch.randn(1, n, h, w) for _ in range(3)]
        assert [o.shape for o in block(feats)] == [f.shape for f in feats]

    def test_zero_convs_are_identity(self):
        block = PSFB(ModelConfig(channels=8))
        zero_(block.conv1)
        zero_(block.conv2)
        feats = [torch.randn(1, 8, 6, 6) for _ in range(3)]
        for o, f in zip(block(feats), feats):
            assert torch.equal(o, f)

    def test_zero_last_conv_is_identity(self):
        block = PSFB(ModelConfig(channels=8))
        zero_(block.conv2)
        feats = [torch.randn(1, 8, 6, 6) for _ in range(3)]
        for o, f in zip(block(feats), feats):
            assert torch.equal(o, f)

    def test_stack_is_composition(self):
        cfg = ModelConfig(channels=8, num_psfb=2)
        net = FusionNetwork(cfg)
        net.blocks[1].load_state_dict(net.blocks[0].state_dict())
        xs = rand_inputs()
        z0, ref = net(*xs)
        feats = net.extract_features(xs)
        once = net.blocks[0](feats)
        twice = net.blocks[0](once)
        torch.testing.assert_close(z0, torch.cat([*twice, ref], 1), rtol=0, atol=0)

    def test_unshared_branch_convs(self):
        block = PSFB(ModelConfig(channels=8, share_branch_convs=False))
        assert len(block.conv1) == 3 and len(block.conv2) == 3
        x = torch.randn(1, 8, 5, 5)
        o = block([x, x, x])
        assert not torch.equal(o[0], o[1])


class TestFusionNetwork:
    def test_z0_width(self):
        z0, ref = FusionNetwork(ModelConfig(channels=64, num_psfb=1))(*rand_inputs(8, 8))
        assert z0.shape == (1, 256, 8, 8) and ref.shape == (1, 64, 8, 8)

    def test_empty_stack_equals_disabled_stack(self):
        torch.manual_seed(5)
        a = FusionNetwork(ModelConfig(channels=8, num_psfb=0))
        b = FusionNetwork(ModelConfig(channels=8, num_psfb=6, enable_psfb_stack=False))
        b.load_state_dict(a.state_dict())
        xs = rand_inputs()
        za, _ = a(*xs)
        zb, _ = b(*xs)
        assert torch.equal(za, zb)
        f = a.extract_features(xs)
        assert torch.equal(za, torch.cat([f[0], f[1], f[2], f[1]], 1))

    @pytest.mark.parametrize("n", range(4, 9))
    def test_block_sweep_shapes(self, n):
        z0, _ = FusionNetwork(ModelConfig(channels=8, num_psfb=n))(*rand_inputs(8, 8))
        assert z0.shape == (1, 32, 8, 8)

    def test_reference_tail_flag(self):
        cfg = ModelConfig(channels=8, num_psfb=1)
        a = FusionNetwork(cfg)
        b = FusionNetwork(cfg.replace(z0_reference="stacked"))
        b.load_state_dict(a.state_dict())
        xs = rand_inputs()
        za, ref = a(*xs)
        zb, _ = b(*xs)
        assert torch.equal(za[:, 24:], ref)
        assert torch.equal(zb[:, 24:], zb[:, 8:16])


class TestDAB:
    def test_shape(self):
        x = torch.randn(2, 12, 7, 9)
        assert DAB(12)(x).shape == x.shape

    def test_gates_in_unit_interval(self):
        dab = DAB(8)
        _, ca, sa = dab.gates(torch.randn(1, 8, 6, 6) * 10)
        for g in (ca, sa):
            assert ((g > 0) & (g < 1)).all()

    def test_gate_bypass_oracle(self):
        dab = DAB(8)
        with torch.no_grad():
            dab.ca.fc2.weight.zero_()
            dab.ca.fc2.bias.fill_(50.0)
            dab.sa.conv.weight.zero_()
            dab.sa.conv.bias.fill_(50.0)
        x = torch.randn(1, 8, 6, 6)
        t = dab.trunk(x)
        expected = torch.nn.functional.conv2d(torch.cat([t, t], 1), dab.merge.weight, dab.merge.bias)
        torch.testing.assert_close(dab(x), expected, rtol=0, atol=1e-5)


class TestRDAB:
    def test_zero_merge_is_identity(self):
        block = RDAB(8)
        zero_(block.body.merge)
        x = torch.randn(1, 8, 5, 5)
        assert torch.equal(block(x), x)

    @pytest.mark.parametrize("c,h,w", [(4, 3, 3), (16, 9, 4)])
    def test_shape(self, c, h, w):
        x = torch.randn(1, c, h, w)
        assert RDAB(c)(x).shape == x.shape

    def test_two_blocks_compose(self):
        cfg = ModelConfig(channels=8, num_rdab=2, enable_local_skip=False, enable_global_skip=False)
        rec = ReconstructionNetwork(cfg)
        a, b = RDAB(8), RDAB(8)
        rec.blocks[0].load_state_dict(a.state_dict())
        rec.blocks[1].load_state_dict(b.state_dict())
        z0, ref = torch.randn(1, 32, 6, 6), torch.randn(1, 8, 6, 6)
        act = lambda t: torch.nn.functional.leaky_relu(t, 0.01)  # noqa: E731
        r = b(a(act(rec.head(z0))))
        r = act(rec.tail2(act(rec.tail1(r))))
        torch.testing.assert_close(rec(z0, ref), torch.sigmoid(rec.out(r)), rtol=0, atol=0)

    def test_without_attention_uses_trunk(self):
        block = RDAB(8, use_attention=False)
        assert not hasattr(block.body, "ca")
        x = torch.randn(1, 8, 5, 5)
        expected = x + block.body.conv2(torch.nn.functional.leaky_relu(block.body.conv1(x), 0.01))
        torch.testing.assert_close(block(x), expected)


class TestReconstruction:
    def test_output_range_and_shape(self):
        rec = ReconstructionNetwork(ModelConfig(channels=64))
        z0 = torch.randn(1, 256, 8, 8) * 20
        out = rec(z0, torch.randn(1, 64, 8, 8))
        assert out.shape == (1, 3, 8, 8)
        assert ((out > 0) & (out < 1)).all()

    def test_skip_toggles(self):
        torch.manual_seed(0)
        base = ModelConfig(channels=8, num_rdab=1)
        z0, ref = torch.randn(1, 32, 6, 6), torch.randn(1, 8, 6, 6)
        outs = {}
        for name, cfg in {"full": base,
                          "no_gsc": base.replace(enable_global_skip=False),
                          "no_lsc": base.replace(enable_local_skip=False)}.items():
            rec = ReconstructionNetwork(cfg)
            if outs:
                rec.load_state_dict(first.state_dict())
            else:
                first = rec
            outs[name] = rec(z0, ref)
        assert not torch.equal(outs["full"], outs["no_gsc"])
        assert not torch.equal(outs["full"], outs["no_lsc"])


class TestForward:
    def test_tiny_end_to_end(self, tiny_config):
        out = PSFNet(tiny_config)(*rand_inputs(32, 32))
        assert out.shape == (1, 3, 32, 32)

    def test_deterministic(self, tiny_config):
        net = PSFNet(tiny_config).eval()
        xs = rand_inputs(16, 16)
        with torch.no_grad():
            assert torch.equal(net(*xs), net(*xs))

    def test_gradients_finite(self, tiny_config):
        net = PSFNet(tiny_config)
        net(*rand_inputs(16, 16)).mean().backward()
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name

    @pytest.mark.parametrize("variant", [
        {"fusion_mode": "summation"}, {"fusion_mode": "concatenation"},
        {"enable_psfb_stack": False}, {"enable_dab": False},
        {"enable_local_skip": False}, {"enable_global_skip": False},
    ])
    def test_ablation_variants_run(self, tiny_config, variant):
        out = PSFNet(tiny_config.replace(**variant))(*rand_inputs(12, 12))
        assert out.shape == (1, 3, 12, 12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_config):
        net = PSFNet(tiny_config).eval()
        save_checkpoint(tmp_path / "m.bin", net)
        loaded, payload = load_checkpoint(tmp_path / "m.bin")
        assert payload["version"] == 1
        xs = rand_inputs(16, 16)
        with torch.no_grad():
            assert torch.equal(net(*xs), loaded(*xs))

    def test_config_mismatch(self, tmp_path, tiny_config):
        save_checkpoint(tmp_path / "m.bin", PSFNet(tiny_config))
        with pytest.raises(ConfigurationError, match="config mismatch"):
            load_checkpoint(tmp_path / "m.bin", tiny_config.replace(channels=16))

    def test_tensor_shape_mismatch(self, tmp_path, tiny_config):
        net = PSFNet(tiny_config)
        save_checkpoint(tmp_path / "m.bin", net)
        payload = torch.load(tmp_path / "m.bin", weights_only=True)
        payload["model_config"]["channels"] = 16
        torch.save(payload, tmp_path / "bad.bin")
        with pytest.raises(ConfigurationError, match="do not match"):
            load_checkpoint(tmp_path / "bad.bin")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"garbage")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "x.bin")
        torch.save({"format": "other"}, tmp_path / "y.bin")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "y.bin")
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "missing.bin")
