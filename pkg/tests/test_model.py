"""Backbone stage geometry, decoder schedule, ablation switches and the full-res baseline."""
import numpy as np
import pytest

from drnet import tensor as T
from drnet.backbone import BackboneConfig, ResidualBlock, backbone_forward
from drnet.decoder import (
    LEVEL_FACTOR,
    DecoderConfig,
    DRNet,
    FullResNet,
    correction_term,
    fullres_upsample,
    initial_depth_head,
    upI_step,
)
from drnet.errors import ConfigError, ShapeError
from drnet.nn import count_parameters
from drnet.rng import SplitMix64
from drnet.tensor import Tensor, finite_diff_check


def image(n, h, w, seed=0, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).random((n, 3, h, w)).astype(dtype))


def zero(param):
    param.data = np.zeros_like(param.data)


class TestBackbone:
    @pytest.mark.parametrize("size,want", [(64, [16, 16, 8, 4, 2]), (224, [56, 56, 28, 14, 7])])
    def test_stage_sizes(self, size, want):
        net = DRNet(seed=0, dtype=np.float32).eval()
        with T.no_grad():
            down = backbone_forward(image(1, size, size, dtype=np.float32), net.backbone)
        assert [d.shape[2] for d in down] == want
        assert [d.shape[3] for d in down] == want
        assert [d.shape[1] for d in down] == [16, 16, 32, 64, 128]

    def test_rectangular_input(self, model64):
        with T.no_grad():
            down = backbone_forward(image(1, 32, 96), model64.backbone)
        assert [d.shape[2:] for d in down] == [(8, 24), (8, 24), (4, 12), (2, 6), (1, 3)]

    def test_indivisible_size_names_32(self, model64):
        with pytest.raises(ShapeError, match="32"):
            backbone_forward(image(1, 33, 64), model64.backbone)

    def test_custom_widths(self):
        net = DRNet(BackboneConfig(widths=[8, 8, 8, 16, 16], blocks_per_layer=[2, 1, 1, 2]), seed=3, dtype=np.float64)
        down = backbone_forward(image(1, 64, 64), net.backbone)
        assert [d.shape[1] for d in down] == [8, 8, 8, 16, 16]

    def test_width_floor(self):
        with pytest.raises(ConfigError, match=r"backbone.widths\[2\]"):
            BackboneConfig(widths=[16, 16, 3, 64, 128]).validate()

    def test_deterministic_under_seed(self):
        a = DRNet(seed=5, dtype=np.float64).eval()
        b = DRNet(seed=5, dtype=np.float64).eval()
        x = image(1, 64, 64)
        with T.no_grad():
            for da, db in zip(backbone_forward(x, a.backbone), backbone_forward(x, b.backbone)):
                np.testing.assert_array_equal(da.data, db.data)

    def test_parameter_names(self, model64):
        names = [n for n, _ in model64.named_parameters() if n.startswith("backbone.")]
        assert all(n.split(".")[1] in {f"layer{i}" for i in range(5)} for n in names)
        assert "backbone.layer0.conv.weight" in names


class TestResidualBlock:
    def test_zero_residual_is_relu(self, rng):
        block = ResidualBlock(4, 4, 1, SplitMix64(0), np.float64)
        zero(block.conv1.weight)
        zero(block.conv2.weight)
        x = rng.standard_normal((2, 4, 5, 5))
        np.testing.assert_allclose(block(Tensor(x)).data, np.maximum(x, 0), atol=1e-12)

    def test_stride_two_halves(self, rng):
        block = ResidualBlock(4, 8, 2, SplitMix64(0), np.float64)
        assert block(Tensor(rng.standard_normal((1, 4, 32, 32)))).shape == (1, 8, 16, 16)

    def test_gradient_check(self, rng):
        block = ResidualBlock(3, 3, 1, SplitMix64(1), np.float64)
        proj = Tensor(rng.standard_normal((1, 3, 8, 8)))
        x = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
        f = lambda t: T.reshape(T.sum(T.mul(block(t), proj)), (1, 1, 1, 1))  # noqa: E731
        assert finite_diff_check(f, x) < 1e-4


class TestSchedule:
    @pytest.mark.parametrize("size", [64, 224])
    def test_pyramid_sizes(self, size):
        net = DRNet(seed=0, dtype=np.float32).eval()
        with T.no_grad():
            pyr = net(image(1, size, size, dtype=np.float32))
        want = [size // 32, size // 16, size // 8, size // 4, size // 4, size]
        assert pyr.sizes() == [(s, s) for s in want]
        assert all(pyr.levels[i].shape[:2] == (1, 1) for i in pyr.levels)

    def test_upI_widths_and_scales(self, model64):
        model64.eval()
        with T.no_grad():
            down = backbone_forward(image(1, 64, 64), model64.backbone)
            dec = model64.decoder
            upI, upII = down[4], initial_depth_head(down[4], dec)
            shapes = {}
            for level in (4, 3, 2, 1, 0):
                upI = upI_step(level, upI, upII, dec)
                upII = T.bilinear_upsample(upII, LEVEL_FACTOR[level])
                shapes[level] = upI.shape
        assert shapes[2] == (1, 16, 16, 16)
        assert shapes[1][2:] == shapes[2][2:]
        assert shapes[0] == (1, 16, 64, 64)

    def test_initial_head_constant_bias(self, model64):
        dec = model64.decoder
        saved = dec.head5.weight.data, dec.head5.bias.data
        try:
            zero(dec.head5.weight)
            dec.head5.bias.data = np.array([0.75])
            out = initial_depth_head(Tensor(np.random.default_rng(0).random((1, 128, 7, 7))), dec)
            assert out.shape == (1, 1, 7, 7)
            np.testing.assert_array_equal(out.data, 0.75)
        finally:
            dec.head5.weight.data, dec.head5.bias.data = saved

    def test_correction_kernel_changes_only_parameters(self):
        x = image(1, 64, 64)
        k1 = DRNet(decoder=DecoderConfig(correction_kernel=1), dtype=np.float64)
        k5 = DRNet(decoder=DecoderConfig(correction_kernel=5), dtype=np.float64)
        assert count_parameters(k5) > count_parameters(k1)
        assert k1(x).sizes() == k5(x).sizes()

    def test_correction_gradient_over_all_inputs(self, rng):
        dec = DRNet(decoder=DecoderConfig(correction_kernel=3), dtype=np.float64).decoder
        parts = [rng.standard_normal((1, 16, 4, 4)), rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 16, 4, 4))]
        proj = Tensor(rng.standard_normal((1, 1, 4, 4)))
        for slot in range(3):
            fixed = [Tensor(p) for p in parts]

            def f(t, slot=slot, fixed=fixed):
                args = list(fixed)
                args[slot] = t
                return T.reshape(T.sum(T.mul(correction_term(2, *args, dec), proj)), (1, 1, 1, 1))

            assert finite_diff_check(f, Tensor(parts[slot], requires_grad=True)) < 1e-4

    def test_co_scale_violation(self, model64, rng):
        with pytest.raises(ShapeError):
            correction_term(2, Tensor(rng.random((1, 16, 4, 4))), Tensor(rng.random((1, 1, 8, 8))),
                            Tensor(rng.random((1, 16, 4, 4))), model64.decoder)


class TestZeroCorrection:
    def test_upII_0_is_bilinear_chain(self):
        net = DRNet(seed=2, dtype=np.float64).eval()
        for level in range(5):
            zero(net.decoder.corr[level].weight)
            zero(net.decoder.corr[level].bias)
        with T.no_grad():
            pyr = net(image(2, 64, 64))
            chain = pyr.levels[5]
            for f in (2, 2, 2, 1, 4):
                chain = T.bilinear_upsample(chain, f)
        np.testing.assert_allclose(pyr.final.data, chain.data, atol=1e-6, rtol=0)

    def test_constant_head_propagates(self):
        net = DRNet(seed=2, dtype=np.float64).eval()
        for level in range(5):
            zero(net.decoder.corr[level].weight)
            zero(net.decoder.corr[level].bias)
        zero(net.decoder.head5.weight)
        net.decoder.head5.bias.data = np.array([2.5])
        with T.no_grad():
            out = net(image(1, 64, 64)).final
        np.testing.assert_allclose(out.data, 2.5, rtol=0, atol=1e-12)


class TestAblations:
    def test_diagonal_toggle_changes_parameters_not_shapes(self):
        x = image(1, 64, 64)
        on = DRNet(decoder=DecoderConfig(diagonal_connections=True), dtype=np.float64)
        off = DRNet(decoder=DecoderConfig(diagonal_connections=False), dtype=np.float64)
        assert count_parameters(on) != count_parameters(off)
        assert on(x).sizes() == off(x).sizes()

    def test_alternate_diagonal_reading(self):
        x = image(1, 64, 64)
        cfg = DecoderConfig(diagonal_connections=False, diagonal_reading="upi_to_correction")
        off = DRNet(decoder=cfg, dtype=np.float64)
        on = DRNet(decoder=DecoderConfig(diagonal_reading="upi_to_correction"), dtype=np.float64)
        assert count_parameters(off) < count_parameters(on)
        assert off(x).sizes() == on(x).sizes()

    def test_no_second_branch_single_output(self):
        net = DRNet(decoder=DecoderConfig(second_branch=False), dtype=np.float64)
        pyr = net(image(2, 64, 64))
        assert list(pyr.levels) == [0]
        assert pyr.final.shape == (2, 1, 64, 64)
        assert not any(n.startswith(("decoder.corr", "decoder.head5")) for n, _ in net.named_parameters())

    def test_invalid_kernel(self):
        with pytest.raises(ConfigError, match=r"decoder.correction_kernel: must be 1, 3, or 5"):
            DecoderConfig(correction_kernel=2).validate()

    def test_parameter_names(self, model64):
        names = {n for n, _ in model64.named_parameters()}
        assert {"decoder.head5.weight", "decoder.upI.0.conv.weight", "decoder.corr.4.bias"} <= names


class TestFullRes:
    def test_concat_holds_every_stage_width(self, model64):
        with T.no_grad():
            down = backbone_forward(image(1, 64, 64), model64.eval().backbone)
            ups = fullres_upsample(down)
        assert all(u.shape[2:] == (64, 64) for u in ups)
        # 16 + 16 + 32 + 64 + 128
        assert sum(u.shape[1] for u in ups) == 256

    def test_output_shape(self, model64):
        base = FullResNet(model64.backbone, dtype=np.float64)
        assert base(image(2, 64, 64)).shape == (2, 1, 64, 64)

    def test_constant_features_stay_constant(self):
        feats = [Tensor(np.full((1, c, s, s), float(c))) for c, s in zip((1, 2, 3, 4, 5), (16, 16, 8, 4, 2))]
        for c, u in enumerate(fullres_upsample(feats), start=1):
            np.testing.assert_array_equal(u.data, float(c))

    def test_shares_backbone_outputs(self, model64):
        base = FullResNet(model64.backbone, dtype=np.float64)
        assert base.backbone is model64.backbone
        x = image(1, 64, 64)
        model64.eval()
        base.eval()
        with T.no_grad():
            a = backbone_forward(x, model64.backbone)
            b = backbone_forward(x, base.backbone)
        for da, db in zip(a, b):
            np.testing.assert_array_equal(da.data, db.data)
        assert all(p.name.startswith("fullres.") for p in base.decoder.parameters())
