"""Network shape contracts, parameter arithmetic, and checkpoint round trips."""

import numpy as np
import pytest
import torch

from refsep.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    load_checkpoint,
    save_checkpoint,
)
from refsep.errors import CheckpointError, ConfigError
from refsep.model import (
    ModelConfig,
    SiameseUNet,
    build_model,
    make_model_config,
    parameter_count,
)

THIN_WIDTHS = (8, 16)  # two-level net for fast shape/gradient work
SMALL_WIDTHS = (8, 12, 16)


def expected_parameter_count(config):
    """Closed-form layer arithmetic, written independently of the module.

    Convolutions and transpose convolutions hold kernel^2 * cin * cout
    weights plus cout biases; each batch-norm holds 2 * cout affine
    parameters.  The stem (3x3, in -> stem_channels, bare conv) and the
    output head (3x3, n_out -> n_out, bare conv) book-end the stacks; the
    encoder side is doubled unless the heads share weights.
    """
    k2 = config.kernel ** 2
    heads = 1 if config.share_encoder_weights else 2
    n_in, n_out = config.in_channels, config.out_channels

    one_encoder = 3 * 3 * n_in * config.stem_channels + config.stem_channels
    for cin, cout in config.encoder_plan:
        one_encoder += k2 * cin * cout + cout  # conv
        one_encoder += 2 * cout  # batch-norm scale and shift

    decoder = 0
    for cin, cout in config.decoder_plan:
        decoder += k2 * cin * cout + cout
        decoder += 2 * cout
    head = 3 * 3 * n_out * n_out + n_out
    return heads * one_encoder + decoder + head


class TestModelConfig:
    def test_default_plan_matches_pinned_decoder(self):
        config = ModelConfig()
        assert config.decoder_plan == (
            (1024, 512), (1536, 512), (1536, 512), (1536, 256),
            (768, 128), (384, 64), (192, 2))
        assert config.depth == 7
        assert config.bottleneck_channels == 1024

    def test_default_consistency_recomputed_by_hand(self):
        config = ModelConfig()
        outs = config.encoder_outs
        assert config.decoder_plan[0][0] == 2 * outs[-1]
        for j in range(1, config.depth):
            prev_out = config.decoder_plan[j - 1][1]
            skip = outs[config.depth - 1 - j]
            assert config.decoder_plan[j][0] == prev_out + 2 * skip

    def test_builder_reproduces_default(self):
        assert make_model_config() == ModelConfig()

    def test_ls_variant(self):
        config = make_model_config(feature_mode="ls")
        assert config.in_channels == 1
        assert config.decoder_plan[-1][1] == 1
        assert config.encoder_plan == ModelConfig().encoder_plan

    def test_thin_and_scaled_builders_are_consistent(self):
        for widths in (THIN_WIDTHS, SMALL_WIDTHS, (16, 32, 64, 128, 128, 128, 128)):
            config = make_model_config(widths=widths)
            config.check_consistency()
            assert config.depth == len(widths)

    def test_single_stage_mismatch_rejected(self):
        broken = list(ModelConfig().decoder_plan)
        broken[4] = (1280, 128)  # skip taken from the wrong scale
        with pytest.raises(ConfigError, match="decoder stage 4"):
            ModelConfig(decoder_plan=tuple(broken))

    def test_rejects_bad_bottleneck_and_chain(self):
        with pytest.raises(ConfigError, match="stage 0"):
            make_config_with_first_decoder(512)
        broken_enc = list(ModelConfig().encoder_plan)
        broken_enc[3] = (999, 512)
        with pytest.raises(ConfigError, match="encoder plan breaks"):
            ModelConfig(encoder_plan=tuple(broken_enc))

    def test_rejects_wrong_output_channels_and_mode(self):
        with pytest.raises(ConfigError, match="feature_mode"):
            make_model_config(feature_mode="mel")
        plan = list(ModelConfig().decoder_plan)
        plan[-1] = (192, 3)
        with pytest.raises(ConfigError, match="must end in 2"):
            ModelConfig(decoder_plan=tuple(plan))

    def test_dict_round_trip(self):
        config = make_model_config(widths=SMALL_WIDTHS, feature_mode="ls",
                                   share_encoder_weights=True)
        assert ModelConfig.from_dict(config.to_dict()) == config


def make_config_with_first_decoder(cin):
    plan = list(ModelConfig().decoder_plan)
    plan[0] = (cin, 512)
    return ModelConfig(decoder_plan=tuple(plan))


class TestParameterCount:
    def test_default_ri_model(self):
        config = ModelConfig()
        model = build_model(config, seed=0)
        assert parameter_count(model) == expected_parameter_count(config)

    def test_ls_model(self):
        config = make_model_config(feature_mode="ls", widths=SMALL_WIDTHS)
        model = build_model(config, seed=0)
        assert parameter_count(model) == expected_parameter_count(config)

    def test_shared_heads_save_exactly_one_encoder(self):
        split = make_model_config(widths=SMALL_WIDTHS)
        shared = make_model_config(widths=SMALL_WIDTHS,
                                   share_encoder_weights=True)
        n_split = parameter_count(build_model(split, seed=0))
        n_shared = parameter_count(build_model(shared, seed=0))
        assert n_split - n_shared == (expected_parameter_count(split)
                                      - expected_parameter_count(shared))
        # The gap is exactly one encoder stack.
        stack = sum(p.numel()
                    for p in build_model(split, seed=0)
                    .reference_encoder.parameters())
        assert n_split - n_shared == stack


@pytest.fixture(scope="module")
def model():
    return build_model(make_model_config(widths=SMALL_WIDTHS), seed=1).eval()


class TestForwardShapes:
    def test_square_input(self, model):
        x = torch.randn(2, 2, 16, 16)
        with torch.no_grad():
            y = model(x, torch.randn(2, 2, 16, 16))
        assert y.shape == (2, 2, 16, 16)

    def test_rectangular_input(self, model):
        x = torch.randn(1, 2, 16, 32)
        with torch.no_grad():
            y = model(x, torch.randn(1, 2, 16, 32))
        assert y.shape == (1, 2, 16, 32)

    def test_full_size_shapes_and_bottleneck(self):
        model = build_model(ModelConfig(), seed=0).eval()
        for frames in (128, 256):
            mix = torch.randn(2, 128, frames)
            ref = torch.randn(2, 128, frames)
            with torch.no_grad():
                out = model(mix, ref)
                mix_pyr = model.encode(mix, "mixture")
                ref_pyr = model.encode(ref, "reference")
            assert out.shape == (2, 128, frames)
            bottleneck = torch.cat([mix_pyr.bottleneck, ref_pyr.bottleneck], 1)
            assert tuple(bottleneck.shape) == (1, 1024, 1, frames // 128)

    def test_feature_pyramid_scales(self):
        config = make_model_config(widths=SMALL_WIDTHS)
        model = build_model(config, seed=0).eval()
        with torch.no_grad():
            pyramid = model.encode(torch.randn(1, 2, 16, 24), "mixture")
        widths = (config.stem_channels,) + config.encoder_outs[:-1]
        for s, feat in enumerate(pyramid.scales):
            assert feat.shape == (1, widths[s], 16 // 2 ** s, 24 // 2 ** s)
        assert pyramid.bottleneck.shape == (1, config.encoder_outs[-1], 2, 3)

    def test_unbatched_matches_batched(self, model):
        mix = torch.randn(2, 16, 16)
        ref = torch.randn(2, 16, 16)
        with torch.no_grad():
            single = model(mix, ref)
            batched = model(mix.unsqueeze(0), ref.unsqueeze(0))[0]
        assert single.shape == (2, 16, 16)
        torch.testing.assert_close(single, batched)

    def test_shape_errors(self, model):
        good = torch.randn(1, 2, 16, 16)
        with pytest.raises(ValueError, match="channels"):
            model(torch.randn(1, 3, 16, 16), good)
        with pytest.raises(ValueError, match="multiples"):
            model(torch.randn(1, 2, 16, 20), torch.randn(1, 2, 16, 20))
        with pytest.raises(ValueError, match="differ"):
            model(good, torch.randn(1, 2, 16, 32))
        with pytest.raises(ValueError, match="head"):
            model.encode(good, "decoder")

    def test_zeroed_parameters_give_constant_output(self, model):
        import copy

        frozen = copy.deepcopy(model)
        with torch.no_grad():
            for p in frozen.parameters():
                p.zero_()
            frozen.head.bias.fill_(0.625)
            a = frozen(torch.randn(1, 2, 16, 16), torch.randn(1, 2, 16, 16))
            b = frozen(torch.zeros(1, 2, 16, 16), torch.zeros(1, 2, 16, 16))
        torch.testing.assert_close(a, torch.full_like(a, 0.625))
        torch.testing.assert_close(a, b)


class TestBuildDeterminism:
    def test_same_seed_same_parameters(self):
        a = build_model(make_model_config(widths=SMALL_WIDTHS), seed=7)
        b = build_model(make_model_config(widths=SMALL_WIDTHS), seed=7)
        for (na, pa), (nb, pb) in zip(a.state_dict().items(),
                                      b.state_dict().items()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = build_model(make_model_config(widths=SMALL_WIDTHS), seed=0)
        b = build_model(make_model_config(widths=SMALL_WIDTHS), seed=1)
        assert not torch.equal(a.head.weight, b.head.weight)

    def test_build_does_not_disturb_global_rng(self):
        torch.manual_seed(99)
        expected = torch.randn(4)
        torch.manual_seed(99)
        build_model(make_model_config(widths=THIN_WIDTHS), seed=5)
        torch.testing.assert_close(torch.randn(4), expected)

    def test_eval_forward_is_deterministic(self):
        model = build_model(make_model_config(widths=SMALL_WIDTHS), seed=3)
        model.eval()
        mix, ref = torch.randn(1, 2, 16, 16), torch.randn(1, 2, 16, 16)
        with torch.no_grad():
            assert torch.equal(model(mix, ref), model(mix, ref))


class TestCheckpoints:
    def make_trained_ish_model(self):
        """A model whose batch-norm running stats are not the defaults."""
        model = build_model(make_model_config(widths=SMALL_WIDTHS), seed=2)
        model.train()
        for _ in range(3):
            model(torch.randn(2, 2, 16, 16), torch.randn(2, 2, 16, 16))
        return model.eval()

    def test_save_load_round_trip_bit_exact(self, tmp_path):
        model = self.make_trained_ish_model()
        save_checkpoint(tmp_path / "m.ckpt", model,
                        meta={"step": 3, "note": "smoke"})
        loaded, meta, extras = load_checkpoint(tmp_path / "m.ckpt")
        assert meta == {"step": 3, "note": "smoke"}
        assert extras == {}
        assert loaded.config == model.config
        for name, tensor in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[name], tensor), name
        mix, ref = torch.randn(1, 2, 16, 16), torch.randn(1, 2, 16, 16)
        with torch.no_grad():
            torch.testing.assert_close(loaded.eval()(mix, ref),
                                       model.eval()(mix, ref),
                                       rtol=0.0, atol=0.0)

    def test_extras_round_trip(self, tmp_path):
        model = build_model(make_model_config(widths=THIN_WIDTHS), seed=0)
        extras = {"opt.m": np.arange(5, dtype=np.float64),
                  "rng": np.frombuffer(b"\x01\x02\x03", dtype=np.uint8)}
        save_checkpoint(tmp_path / "m.ckpt", model, extras=extras)
        _, _, loaded = load_checkpoint(tmp_path / "m.ckpt")
        assert set(loaded) == {"opt.m", "rng"}
        np.testing.assert_array_equal(loaded["opt.m"], extras["opt.m"])
        np.testing.assert_array_equal(loaded["rng"], extras["rng"])

    def test_truncated_file_rejected(self, tmp_path):
        model = build_model(make_model_config(widths=THIN_WIDTHS), seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version_rejected(self, tmp_path):
        model = build_model(make_model_config(widths=THIN_WIDTHS), seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = bytearray(path.read_bytes())
        assert blob[: len(MAGIC)] == MAGIC
        blob[len(MAGIC)] = FORMAT_VERSION + 1
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "no.ckpt")
