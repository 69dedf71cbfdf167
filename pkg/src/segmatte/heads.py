"""Task heads: upsample decoded features and read them out through a
token-conditioned linear functional, one independent head per task."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from . import tensor as T
from .backbone import ConfigError
from .nn import MLP, ChannelNorm2d, Module
from .tensor import Parameter, Tensor


@dataclass
class HeadConfig:
    in_channels: int
    feature_resolution: int
    target_resolution: int = 256
    channel_floor: int = 8

    @property
    def up_stages(self) -> int:
        ratio = self.target_resolution / self.feature_resolution
        stages = math.log2(ratio) if ratio >= 1 else -1.0
        if stages < 0 or stages != int(stages):
            raise ConfigError(
                f"target {self.target_resolution} is not feature {self.feature_resolution} * 2^k"
            )
        return int(stages)

    def stage_channels(self) -> List[int]:
        chans = [self.in_channels]
        for _ in range(self.up_stages):
            chans.append(max(chans[-1] // 2, self.channel_floor))
        return chans


class UpStage(Module):
    """bilinear x2 -> conv3x3 -> per-channel norm -> GELU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(cin * 9), size=(cout, cin, 3, 3)))
        self.bias = Parameter(np.zeros(cout))
        self.norm = ChannelNorm2d(cout)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.bilinear_resize(x, x.shape[-2] * 2, x.shape[-1] * 2)
        x = T.conv2d(x, self.weight, self.bias)
        return T.gelu(self.norm(x))


class PredictionHead(Module):
    """Upsampling trunk plus a 2-layer MLP turning the task token into a
    per-pixel linear functional; output is sigmoid(token . pixel_features)."""

    def __init__(self, cfg: HeadConfig, rng: np.random.Generator):
        self.cfg = cfg
        chans = cfg.stage_channels()
        self.stages = [UpStage(chans[i], chans[i + 1], rng) for i in range(cfg.up_stages)]
        self.token_mlp = MLP(cfg.in_channels, cfg.in_channels, chans[-1], rng)

    def __call__(self, token_rows: Tensor, feats: Tensor) -> Tensor:
        """token_rows: [B,D]; feats: [B,C,S,S] -> [B,1,R,R] in [0,1].

        The upsampling trunk is size-agnostic: a feature grid other than the
        configured one produces S * 2^up_stages output.
        """
        if feats.shape[-2] != feats.shape[-1]:
            raise ConfigError(f"expected square feature maps, got {feats.shape}")
        x = feats
        for stage in self.stages:
            x = stage(x)
        b, c, r, _ = x.shape
        functional = self.token_mlp(token_rows)  # [B, c]
        logits = []
        for i in range(b):
            pixels = T.reshape(x[i], (c, r * r))
            logits.append(T.matmul(functional[i : i + 1, :], pixels))  # [1, R*R]
        return T.sigmoid(T.reshape(T.concat(logits, axis=0), (b, 1, r, r)))
