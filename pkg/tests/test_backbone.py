"""Frozen backbone stub: shape laws, determinism, freeze policy, decoder contract."""

import numpy as np
import pytest

import segmatte.tensor as T
from segmatte.backbone import (
    ConfigError,
    DecoderLayer,
    EncoderConfig,
    ImageEncoder,
    PromptEncoder,
    PromptSet,
    PromptValidationError,
    decoder_layer_channel_major,
)
from segmatte.gradcheck import max_gradient_error
from segmatte.tensor import ContractError, ShapeError, Tensor


@pytest.fixture
def cfg():
    return EncoderConfig(embed_dim=16, depth=2, heads=4)


@pytest.fixture
def encoder(cfg):
    return ImageEncoder(cfg, np.random.default_rng(0))


def _image(seed, b=1, size=64):
    return Tensor(np.random.default_rng(seed).uniform(size=(b, 3, size, size)))


class TestEncoderConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            EncoderConfig(embed_dim=30, heads=4)

    def test_early_block_range(self):
        with pytest.raises(ConfigError):
            EncoderConfig(depth=2, early_block=3)


class TestImageEncoder:
    def test_stride16_shape_law(self, encoder):
        feats = encoder.encode(_image(0, size=64))
        assert feats.f_global.shape == (1, 16, 4, 4)
        assert feats.f_early.shape == (1, 16, 4, 4)

    def test_shape_law_other_sizes(self, encoder):
        feats = encoder.encode(Tensor(np.random.default_rng(1).uniform(size=(2, 3, 32, 64))))
        assert feats.f_global.shape == (2, 16, 2, 4)

    def test_determinism(self, encoder):
        a = encoder.encode(_image(2)).f_global.data
        b = encoder.encode(_image(2)).f_global.data
        assert np.array_equal(a, b)

    def test_indivisible_dims_rejected(self, encoder):
        with pytest.raises(ShapeError):
            encoder.encode(Tensor(np.zeros((1, 3, 63, 64))))

    def test_all_parameters_frozen_and_detached(self, encoder):
        assert all(not p.requires_grad for p in encoder.parameters())
        feats = encoder.encode(_image(3))
        assert not feats.f_global.requires_grad
        assert feats.f_global._parents == ()

    def test_early_differs_from_final(self, encoder):
        feats = encoder.encode(_image(4))
        assert not np.allclose(feats.f_global.data, feats.f_early.data)


class TestPromptEncoder:
    def test_box_gives_two_tokens(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        tokens, _ = enc.encode(PromptSet(box=(4, 4, 40, 40)), (64, 64))
        assert tokens.shape == (2, 16)

    def test_points_plus_box_count(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        pts = [(5.0, 5.0, "fg"), (10.0, 12.0, "fg"), (30.0, 3.0, "fg")]
        tokens, _ = enc.encode(PromptSet(points=pts, box=(4, 4, 40, 40)), (64, 64))
        assert tokens.shape == (5, 16)

    def test_no_coarse_mask_zero_dense(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        _, dense = enc.encode(PromptSet(box=(4, 4, 40, 40)), (64, 64))
        assert dense.shape == (16, 4, 4)
        assert np.all(dense.data == 0.0)

    def test_coarse_mask_nonzero_dense(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        mask = np.zeros((1, 64, 64))
        mask[0, 16:48, 16:48] = 1.0
        _, dense = enc.encode(PromptSet(box=(4, 4, 40, 40), coarse_mask=mask), (64, 64))
        assert not np.all(dense.data == 0.0)

    def test_empty_prompts_rejected(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        with pytest.raises(ContractError):
            enc.encode(PromptSet(), (64, 64))

    def test_out_of_bounds_point_rejected(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        with pytest.raises(PromptValidationError):
            enc.encode(PromptSet(points=[(99.0, 5.0, "fg")]), (64, 64))

    def test_degenerate_box_rejected(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        with pytest.raises(PromptValidationError):
            enc.encode(PromptSet(box=(10, 10, 10, 20)), (64, 64))

    def test_fg_bg_labels_differ(self, cfg):
        enc = PromptEncoder(cfg, np.random.default_rng(1))
        fg_tok, _ = enc.encode(PromptSet(points=[(5.0, 5.0, "fg")]), (64, 64))
        bg_tok, _ = enc.encode(PromptSet(points=[(5.0, 5.0, "bg")]), (64, 64))
        assert not np.allclose(fg_tok.data, bg_tok.data)


class TestDecoderLayer:
    def _layer(self, dim=16):
        return DecoderLayer(dim, 4, np.random.default_rng(2))

    def test_shapes_preserved(self):
        layer = self._layer()
        tokens = Tensor(np.random.default_rng(3).normal(size=(9, 16)))
        feats = Tensor(np.random.default_rng(4).normal(size=(25, 16)))
        t, f = layer(tokens, feats)
        assert t.shape == (9, 16) and f.shape == (25, 16)

    def test_zero_weights_residual_identity(self):
        layer = self._layer()
        layer.zero_all()
        tokens = Tensor(np.random.default_rng(5).normal(size=(4, 16)))
        feats = Tensor(np.random.default_rng(6).normal(size=(9, 16)))
        t, f = layer(tokens, feats)
        np.testing.assert_array_equal(t.data, tokens.data)
        np.testing.assert_array_equal(f.data, feats.data)

    def test_dim_mismatch_rejected(self):
        layer = self._layer()
        with pytest.raises(ShapeError):
            layer(Tensor(np.zeros((4, 16))), Tensor(np.zeros((9, 8))))

    def test_channel_major_wrapper_round_trip(self):
        layer = self._layer()
        tokens = Tensor(np.random.default_rng(7).normal(size=(4, 16)))
        feats_cs = Tensor(np.random.default_rng(8).normal(size=(16, 25)))
        t, f_cs = decoder_layer_channel_major(layer, tokens, feats_cs)
        t2, f_pos = layer(tokens, T.transpose(feats_cs))
        np.testing.assert_array_equal(f_cs.data, f_pos.data.T)
        np.testing.assert_array_equal(t.data, t2.data)

    def test_feature_gradient_wrt_token_matches_fd(self):
        layer = self._layer(dim=8)
        rng = np.random.default_rng(9)
        feats = Tensor(rng.normal(size=(4, 8)))
        tokens = Tensor(rng.normal(size=(2, 8)), requires_grad=True)

        def fn(tok):
            _, f = layer(tok, feats)
            return T.tsum(T.square(f))

        assert max_gradient_error(fn, [tokens]) < 1e-4

    def test_frozen_decoder_receives_no_grads_when_frozen(self):
        layer = self._layer(dim=8)
        layer.freeze()
        tokens = Tensor(np.random.default_rng(10).normal(size=(2, 8)), requires_grad=True)
        feats = Tensor(np.random.default_rng(11).normal(size=(4, 8)))
        _, f = layer(tokens, feats)
        T.tsum(T.square(f)).backward()
        assert tokens.grad is not None
        assert all(p.grad is None for p in layer.parameters())
