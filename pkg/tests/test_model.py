"""End-to-end model wiring: shape laws, token counts, adapter invariants."""

import numpy as np
import pytest

import segmatte.tensor as T
from segmatte.backbone import ConfigError, PromptSet
from segmatte.gradcheck import max_gradient_error
from segmatte.model import ModelConfig, SegMatteModel
from segmatte.tensor import Tensor


@pytest.fixture(scope="module")
def model():
    return SegMatteModel(ModelConfig(image_size=64, embed_dim=16, heads=4, output_resolution=64), seed=0)


def _image(seed, b=1):
    return Tensor(np.random.default_rng(seed).uniform(size=(b, 3, 64, 64)))


def _prompts(b=1):
    return [PromptSet(box=(8.0, 8.0, 50.0, 50.0)) for _ in range(b)]


class TestModelConfig:
    def test_invalid_image_size(self):
        with pytest.raises(ConfigError):
            ModelConfig(image_size=48)

    def test_invalid_head_split(self):
        with pytest.raises(ConfigError):
            ModelConfig(embed_dim=30, heads=4)


class TestForward:
    def test_both_outputs_one_pass(self, model):
        result = model.forward(_image(0), _prompts())
        assert result.seg.shape == (1, 1, 64, 64)
        assert result.matte.shape == (1, 1, 64, 64)
        assert result.seg.data.min() >= 0 and result.seg.data.max() <= 1

    def test_batch_of_two(self, model):
        result = model.forward(_image(1, b=2), _prompts(2))
        assert result.seg.shape == (2, 1, 64, 64)

    def test_token_count_law(self, model):
        prompts = [
            PromptSet(points=[(5.0, 5.0, "fg")], box=(8.0, 8.0, 50.0, 50.0)),
        ]
        result = model.forward(_image(2), prompts, tasks=("seg",))
        assert result.token_counts == [7 + 3]

    def test_single_task_skips_other_head(self, model):
        result = model.forward(_image(3), _prompts(), tasks=("seg",))
        assert result.matte is None
        with pytest.raises(ValueError):
            result.output("matte")

    def test_residual_law_on_every_round(self, model):
        result = model.forward(_image(4), _prompts())
        assert len(result.adapter_states[0]) == 2
        for state in result.adapter_states[0]:
            np.testing.assert_array_equal(
                state.f_updated.data, state.f_out.data + state.confidence.data
            )
            assert np.max(np.abs(state.confidence.data)) <= np.max(np.abs(state.f_fused.data)) + 1e-15

    def test_determinism(self, model):
        a = model.forward(_image(5), _prompts()).seg.data
        b = model.forward(_image(5), _prompts()).seg.data
        assert np.array_equal(a, b)


class TestZeroAdapterEquivalence:
    def test_bit_identical_to_plain_decode(self):
        model = SegMatteModel(ModelConfig(image_size=64, embed_dim=16, heads=4, output_resolution=64), seed=1)
        image, prompts = _image(6), _prompts()
        plain = model.forward(image, prompts, use_adapter=False)
        model.adapter.round1.zero_output_paths()
        model.adapter.round2.zero_output_paths()
        zeroed = model.forward(image, prompts)
        assert np.array_equal(zeroed.seg.data, plain.seg.data)
        assert np.array_equal(zeroed.matte.data, plain.matte.data)


class TestParameterPartition:
    def test_partition_is_total_and_disjoint(self, model):
        named = dict(model.named_parameters())
        trainable = set(model.trainable_parameters())
        frozen = set(model.frozen_parameters())
        assert trainable | frozen == set(named)
        assert trainable & frozen == set()

    def test_backbone_and_special_tokens_frozen(self, model):
        frozen = model.frozen_parameters()
        for prefix in model.FROZEN_PREFIXES:
            assert any(name.startswith(prefix) for name in frozen), prefix
        trainable = model.trainable_parameters()
        assert "tokens.sama" in trainable
        assert not any(name.startswith(p) for name in trainable for p in model.FROZEN_PREFIXES)

    def test_adapter_namespace(self, model):
        names = set(dict(model.named_parameters()))
        assert any(n.startswith("adapter.round1.") for n in names)
        assert any(n.startswith("adapter.round2.") for n in names)

    def test_head_parameter_selectors(self, model):
        seg = model.head_parameters("seg")
        matte = model.head_parameters("matte")
        assert seg and matte and set(seg).isdisjoint(matte)


class TestGradientFlow:
    def test_loss_reaches_all_trainable_groups(self, model):
        result = model.forward(_image(7), _prompts())
        loss = T.add(T.tmean(T.square(result.seg)), T.tmean(T.square(result.matte)))
        loss.backward()
        groups = ("tokens.sama", "mvle.", "adapter.round1.", "adapter.round2.", "seg_head.", "matte_head.")
        trainable = model.trainable_parameters()
        for group in groups:
            touched = [p.grad is not None for n, p in trainable.items() if n.startswith(group)]
            assert touched and any(touched), group
        for _, p in model.frozen_parameters().items():
            assert p.grad is None
        for p in trainable.values():
            p.zero_grad()

    def test_sama_token_gradient_matches_fd(self):
        model = SegMatteModel(
            ModelConfig(image_size=32, embed_dim=8, heads=2, output_resolution=8, pool_rfs=(2,)),
            seed=2,
        )
        image = Tensor(np.random.default_rng(8).uniform(size=(1, 3, 32, 32)))
        prompts = [PromptSet(box=(4.0, 4.0, 28.0, 28.0))]

        def fn(_sama):
            out = model.forward(image, prompts, tasks=("seg",))
            return T.tmean(T.square(out.seg))

        assert max_gradient_error(fn, [model.tokens.sama]) < 1e-4
