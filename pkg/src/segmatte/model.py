"""Full model: frozen backbone + multi-view localization + per-round
adapters + dual task heads, wired per the decode contract."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .adapter import AdapterStack, AdapterState, TokenBlock, assemble_tokens, decode
from .backbone import (
    ConfigError,
    DecoderLayer,
    EncoderConfig,
    ImageEncoder,
    PromptEncoder,
    PromptSet,
)
from .heads import HeadConfig, PredictionHead
from .mvle import MultiViewLocalizer, crop_views, encode_views, pool_multiscale
from .nn import Module
from .tensor import Parameter, ShapeError, Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    embed_dim: int = 32
    heads: int = 4
    encoder_depth: int = 2
    pool_rfs: Tuple[int, ...] = (4, 8, 16)
    output_resolution: int = 256

    def __post_init__(self):
        if self.image_size % 32:
            raise ConfigError(f"image_size {self.image_size} must be divisible by 32")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def feature_resolution(self) -> int:
        return self.image_size // 16


class TokenBank(Module):
    """The learnable output-token pair plus the frozen mask/IoU tokens."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.sama = Parameter(rng.normal(0.0, 0.5, size=(2, dim)))
        self.sam_mask = Parameter(rng.normal(0.0, 0.5, size=(4, dim)), requires_grad=False)
        self.iou = Parameter(rng.normal(0.0, 0.5, size=(1, dim)), requires_grad=False)


@dataclass
class ForwardResult:
    seg: Optional[Tensor] = None  # [B,1,R,R]
    matte: Optional[Tensor] = None  # [B,1,R,R]
    adapter_states: List[List[AdapterState]] = field(default_factory=list)
    token_counts: List[int] = field(default_factory=list)

    def output(self, task: str) -> Tensor:
        value = self.seg if task == "seg" else self.matte
        if value is None:
            raise ValueError(f"task {task!r} was not computed")
        return value


class SegMatteModel(Module):
    """Promptable dual-head segmentation/matting model over a frozen backbone."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        # clip infeasible pooling fields once, instead of warning every forward
        usable_rfs = tuple(rf for rf in cfg.pool_rfs if rf <= cfg.feature_resolution)
        if not usable_rfs:
            raise ConfigError(
                f"no pooling field in {cfg.pool_rfs} fits feature size {cfg.feature_resolution}"
            )
        if usable_rfs != tuple(cfg.pool_rfs):
            warnings.warn(
                f"pooling fields {tuple(set(cfg.pool_rfs) - set(usable_rfs))} exceed "
                f"feature size {cfg.feature_resolution}; clipped",
                RuntimeWarning,
                stacklevel=2,
            )
        self._pool_rfs = usable_rfs
        enc_cfg = EncoderConfig(embed_dim=cfg.embed_dim, depth=cfg.encoder_depth, heads=cfg.heads)
        self.encoder = ImageEncoder(enc_cfg, np.random.default_rng([seed, 1]))
        self.prompt_encoder = PromptEncoder(enc_cfg, np.random.default_rng([seed, 2]))
        self.decoder1 = DecoderLayer(cfg.embed_dim, cfg.heads, np.random.default_rng([seed, 3]))
        self.decoder2 = DecoderLayer(cfg.embed_dim, cfg.heads, np.random.default_rng([seed, 4]))
        self.decoder1.freeze()
        self.decoder2.freeze()
        self.tokens = TokenBank(cfg.embed_dim, np.random.default_rng([seed, 5]))
        self.mvle = MultiViewLocalizer(cfg.embed_dim, cfg.heads, np.random.default_rng([seed, 6]))
        self.adapter = AdapterStack(cfg.embed_dim, cfg.heads, np.random.default_rng([seed, 7]))
        head_cfg = HeadConfig(
            in_channels=cfg.embed_dim,
            feature_resolution=cfg.feature_resolution,
            target_resolution=cfg.output_resolution,
        )
        self.seg_head = PredictionHead(head_cfg, np.random.default_rng([seed, 8]))
        self.matte_head = PredictionHead(head_cfg, np.random.default_rng([seed, 9]))

    # -- parameter partitions -------------------------------------------------

    FROZEN_PREFIXES = ("encoder.", "prompt_encoder.", "decoder1.", "decoder2.", "tokens.sam_mask", "tokens.iou")

    def trainable_parameters(self) -> Dict[str, Parameter]:
        return {name: p for name, p in self.named_parameters() if p.requires_grad}

    def frozen_parameters(self) -> Dict[str, Parameter]:
        return {name: p for name, p in self.named_parameters() if not p.requires_grad}

    def head_parameters(self, task: str) -> Dict[str, Parameter]:
        prefix = "seg_head." if task == "seg" else "matte_head."
        return {n: p for n, p in self.named_parameters() if n.startswith(prefix)}

    # -- forward ----------------------------------------------------------------

    def forward(
        self,
        image: Tensor,
        prompts: Sequence[PromptSet],
        tasks: Sequence[str] = ("seg", "matte"),
        use_adapter: bool = True,
    ) -> ForwardResult:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected [B,3,H,W], got {image.shape}")
        b, _, h, w = image.shape
        if len(prompts) != b:
            raise ShapeError(f"{len(prompts)} prompt sets for batch of {b}")
        feats = self.encoder.encode(image)

        if use_adapter:
            views = crop_views(image)
            f_local = encode_views(views, self.encoder)
            ctx = pool_multiscale(feats.f_global, self._pool_rfs)
            local_maps = self.mvle.localize(f_local, ctx)

        result = ForwardResult()
        per_item_feats: List[Tensor] = []
        per_item_sama: List[Tensor] = []
        c = self.cfg.embed_dim
        s = self.cfg.feature_resolution
        for i in range(b):
            prompt_tokens, dense = self.prompt_encoder.encode(prompts[i], (h, w))
            block = assemble_tokens(self.tokens.sama, self.tokens.sam_mask, self.tokens.iou, prompt_tokens)
            result.token_counts.append(block.total)
            feats_i = T.add(feats.f_global[i], dense)
            locals_i = [lm[i] for lm in local_maps] if use_adapter else []
            tokens_out, feats_out, states = decode(
                block,
                feats_i,
                locals_i,
                feats.f_early[i],
                (self.decoder1, self.decoder2),
                self.adapter,
                use_adapter=use_adapter,
            )
            result.adapter_states.append(states)
            per_item_feats.append(T.reshape(feats_out, (1, c, s, s)))
            per_item_sama.append(tokens_out[0:2, :])

        feats_batch = T.concat(per_item_feats, axis=0)
        if "seg" in tasks:
            rows = T.concat([t[TokenBlock.SEG_ROW : TokenBlock.SEG_ROW + 1, :] for t in per_item_sama], axis=0)
            result.seg = self.seg_head(rows, feats_batch)
        if "matte" in tasks:
            rows = T.concat([t[TokenBlock.MATTE_ROW : TokenBlock.MATTE_ROW + 1, :] for t in per_item_sama], axis=0)
            result.matte = self.matte_head(rows, feats_batch)
        return result
