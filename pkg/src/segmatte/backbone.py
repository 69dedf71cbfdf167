"""Frozen promptable-segmentation backbone stand-in.

A small ViT-style image encoder (stride-16 patch embed + attention blocks),
a prompt encoder for points/boxes/coarse masks, and the two-way decoder
layer. All weights are drawn once from the construction seed and frozen;
gradients never flow into them, but the decoder layer stays on the graph so
tokens and features upstream of it can be trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .nn import MLP, Linear, Module, MultiHeadAttention
from .tensor import ContractError, Parameter, ShapeError, Tensor, no_grad


class ConfigError(ValueError):
    """A model or training configuration violates its invariants."""


class PromptValidationError(ValueError):
    """Prompt coordinates fall outside the image or a box is degenerate."""


PATCH_STRIDE = 16


@dataclass
class EncoderConfig:
    embed_dim: int = 32
    depth: int = 2
    heads: int = 4
    early_block: int = 1  # which block output feeds the boundary-detail path

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 1 <= self.early_block <= self.depth:
            raise ConfigError(f"early_block {self.early_block} outside 1..{self.depth}")


@dataclass
class PromptSet:
    """User interaction: labelled points, an optional box, an optional coarse mask."""

    points: List[Tuple[float, float, str]] = field(default_factory=list)
    box: Optional[Tuple[float, float, float, float]] = None
    coarse_mask: Optional[np.ndarray] = None  # [1,H,W] in [0,1]
    image_size: Optional[Tuple[int, int]] = None  # (H, W) used for validation

    def validate(self, image_size: Optional[Tuple[int, int]] = None) -> None:
        size = image_size or self.image_size
        if not self.points and self.box is None and self.coarse_mask is None:
            raise ContractError("empty prompt set")
        for x, y, label in self.points:
            if label not in ("fg", "bg"):
                raise PromptValidationError(f"point label {label!r} not in {{fg, bg}}")
            if size is not None:
                h, w = size
                if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                    raise PromptValidationError(f"point ({x}, {y}) outside {w}x{h}")
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if not (x0 < x1 and y0 < y1):
                raise PromptValidationError(f"degenerate box {self.box}")
            if size is not None:
                h, w = size
                if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
                    raise PromptValidationError(f"box {self.box} outside {w}x{h}")

    @property
    def n_prompt(self) -> int:
        return len(self.points) + (2 if self.box is not None else 0)

    def to_json_dict(self) -> dict:
        payload: dict = {"points": [[x, y, label] for x, y, label in self.points]}
        if self.box is not None:
            payload["box"] = list(self.box)
        return payload


@dataclass
class BackboneFeatures:
    """Stride-16 global features plus the early-block tap (both detached)."""

    f_global: Tensor  # [B,C,H/16,W/16]
    f_early: Tensor  # [B,C,H/16,W/16]


class EncoderBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.mlp = MLP(dim, 2 * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(x, x, x))
        return T.add(x, self.mlp(x))


class ImageEncoder(Module):
    """Stride-16 patch embedding followed by ``depth`` attention blocks, frozen."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.embed_dim
        patch_dim = 3 * PATCH_STRIDE * PATCH_STRIDE
        self.patch_proj = Linear(patch_dim, d, rng)
        self.pos_embed_seed = int(rng.integers(0, 2**31 - 1))
        self.blocks = [EncoderBlock(d, cfg.heads, rng) for _ in range(cfg.depth)]
        self.freeze()

    def _positional(self, gh: int, gw: int) -> np.ndarray:
        rng = np.random.default_rng([self.pos_embed_seed, gh, gw])
        return rng.normal(0.0, 0.02, size=(gh * gw, self.cfg.embed_dim))

    def encode(self, image: Tensor) -> BackboneFeatures:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected [B,3,H,W], got {image.shape}")
        b, _, h, w = image.shape
        if h % PATCH_STRIDE or w % PATCH_STRIDE:
            raise ShapeError(f"spatial dims {h}x{w} not divisible by {PATCH_STRIDE}")
        gh, gw = h // PATCH_STRIDE, w // PATCH_STRIDE
        d = self.cfg.embed_dim
        with no_grad():
            pos = Tensor(self._positional(gh, gw))
            finals, earlies = [], []
            for i in range(b):
                patches = (
                    image.data[i]
                    .reshape(3, gh, PATCH_STRIDE, gw, PATCH_STRIDE)
                    .transpose(1, 3, 0, 2, 4)
                    .reshape(gh * gw, -1)
                )
                x = T.add(self.patch_proj(Tensor(patches)), pos)
                early = None
                for bi, block in enumerate(self.blocks, start=1):
                    x = block(x)
                    if bi == self.cfg.early_block:
                        early = x
                finals.append(T.reshape(T.transpose(x), (1, d, gh, gw)))
                earlies.append(T.reshape(T.transpose(early), (1, d, gh, gw)))
            f_global = T.concat(finals, axis=0)
            f_early = T.concat(earlies, axis=0)
        return BackboneFeatures(f_global=f_global, f_early=f_early)


def sinusoidal_position(x: float, y: float, size: Tuple[int, int], dim: int) -> np.ndarray:
    """Fixed sin/cos embedding of normalized pixel coordinates."""
    h, w = size
    nx, ny = x / max(w - 1, 1), y / max(h - 1, 1)
    out = np.zeros(dim)
    quarter = dim // 4
    for i in range(quarter):
        freq = (2.0**i) * math.pi
        out[4 * i + 0] = math.sin(nx * freq)
        out[4 * i + 1] = math.cos(nx * freq)
        out[4 * i + 2] = math.sin(ny * freq)
        out[4 * i + 3] = math.cos(ny * freq)
    return out


LABEL_ROWS = {"fg": 0, "bg": 1, "corner0": 2, "corner1": 3}


class PromptEncoder(Module):
    """Maps prompts to tokens plus a dense stride-16 addend; frozen."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.embed_dim
        self.label_embed = Parameter(rng.normal(0.0, 0.5, size=(4, d)))
        self.mask_weight = Parameter(rng.normal(0.0, 0.5, size=(d, 1, 1, 1)))
        self.mask_bias = Parameter(np.zeros(d))
        self.freeze()

    def encode(self, prompts: PromptSet, image_size: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
        prompts.validate(image_size)
        h, w = image_size
        gh, gw = h // PATCH_STRIDE, w // PATCH_STRIDE
        d = self.cfg.embed_dim
        with no_grad():
            rows = []
            for x, y, label in prompts.points:
                pe = sinusoidal_position(x, y, image_size, d)
                rows.append(pe + self.label_embed.data[LABEL_ROWS[label]])
            if prompts.box is not None:
                x0, y0, x1, y1 = prompts.box
                rows.append(
                    sinusoidal_position(x0, y0, image_size, d)
                    + self.label_embed.data[LABEL_ROWS["corner0"]]
                )
                rows.append(
                    sinusoidal_position(x1, y1, image_size, d)
                    + self.label_embed.data[LABEL_ROWS["corner1"]]
                )
            tokens = Tensor(np.stack(rows)) if rows else Tensor(np.zeros((0, d)))
            if prompts.coarse_mask is not None:
                mask = Tensor(np.asarray(prompts.coarse_mask, dtype=np.float64))
                if mask.shape != (1, h, w):
                    raise ShapeError(f"coarse mask {mask.shape} != (1,{h},{w})")
                pooled = T.avg_pool2d(mask, PATCH_STRIDE)
                dense = T.conv2d(pooled, self.mask_weight, self.mask_bias)
            else:
                dense = Tensor(np.zeros((d, gh, gw)))
        return tokens, dense


class DecoderLayer(Module):
    """Two-way block: token self-attn, token->image, token MLP, image->token."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.token_to_image = MultiHeadAttention(dim, heads, rng)
        self.mlp = MLP(dim, 2 * dim, dim, rng)
        self.image_to_token = MultiHeadAttention(dim, heads, rng)

    def __call__(self, tokens: Tensor, feats: Tensor) -> Tuple[Tensor, Tensor]:
        """tokens: [T,D]; feats: [S,D] position-major. Shapes are preserved."""
        if tokens.shape[1] != feats.shape[1]:
            raise ShapeError(f"token dim {tokens.shape[1]} != feature dim {feats.shape[1]}")
        t = T.add(tokens, self.self_attn(tokens, tokens, tokens))
        t = T.add(t, self.token_to_image(t, feats, feats))
        t = T.add(t, self.mlp(t))
        f = T.add(feats, self.image_to_token(feats, t, t))
        return t, f


def decoder_layer_channel_major(
    layer: DecoderLayer, tokens: Tensor, feats_cs: Tensor
) -> Tuple[Tensor, Tensor]:
    """Spec-facing wrapper taking the image feature as [C, S] flattened."""
    if feats_cs.shape[0] != layer.dim:
        raise ShapeError(f"feature channels {feats_cs.shape[0]} != decoder dim {layer.dim}")
    t, f = layer(tokens, T.transpose(feats_cs))
    return t, T.transpose(f)
