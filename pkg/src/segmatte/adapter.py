"""Local-detail adapter: after each frozen decoder layer, fuse the aligned
local features back into the decoding stream.

Stage 1 treats decoder features as queries against the concatenated local
sequences (each local map gets an early-feature residual first). Stage 2
swaps roles — the stage-1 key/value sequence queries the stage-1 output —
and its output is carried forward as the next round's local-feature input.
The fused map enters the stream through a confidence gate:
sigmoid(conv1x1(F_out)) * fused, added residually onto F_out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .backbone import DecoderLayer
from .nn import Module, MultiHeadAttention
from .tensor import Parameter, ShapeError, Tensor

NUM_VIEWS = 4


@dataclass
class TokenBlock:
    """Ordered token rows: 2 output tokens, 4 frozen mask tokens, 1 frozen
    IoU token, then the prompt tokens. Only the output tokens are trainable."""

    sama: Tensor  # [2,D]: row 0 segmentation, row 1 matting
    sam_mask: Tensor  # [4,D] frozen
    iou: Tensor  # [1,D] frozen
    prompt: Tensor  # [N,D]

    SEG_ROW = 0
    MATTE_ROW = 1

    def concat(self) -> Tensor:
        return T.concat([self.sama, self.sam_mask, self.iou, self.prompt], axis=0)

    @property
    def total(self) -> int:
        return 7 + self.prompt.shape[0]


def assemble_tokens(sama: Tensor, sam_mask: Tensor, iou: Tensor, prompt: Tensor) -> TokenBlock:
    dims = {t.shape[1] for t in (sama, sam_mask, iou) if t.shape[0]}
    if prompt.shape[0]:
        dims.add(prompt.shape[1])
    if len(dims) != 1:
        raise ShapeError(f"token widths disagree: {sorted(dims)}")
    if sama.shape[0] != 2 or sam_mask.shape[0] != 4 or iou.shape[0] != 1:
        raise ShapeError(
            f"expected 2/4/1 output/mask/iou tokens, got {sama.shape[0]}/{sam_mask.shape[0]}/{iou.shape[0]}"
        )
    return TokenBlock(sama=sama, sam_mask=sam_mask, iou=iou, prompt=prompt)


@dataclass
class AdapterState:
    """One round's fusion record; the residual law holds exactly:
    f_updated - f_out == confidence (elementwise)."""

    f_fused: Tensor  # stage-1 output at decoder-feature resolution
    confidence: Tensor  # sigmoid(conv(f_out)) * f_fused
    f_out: Tensor  # decoder-layer output the round started from
    f_updated: Tensor  # f_out + confidence


def _flatten(fmap: Tensor) -> Tensor:
    c, sh, sw = fmap.shape
    return T.transpose(T.reshape(fmap, (c, sh * sw)))


def _unflatten(seq: Tensor, sh: int, sw: int) -> Tensor:
    return T.reshape(T.transpose(seq), (seq.shape[1], sh, sw))


def _early_quadrant(f_early: Tensor, m: int, sh: int, sw: int) -> Tensor:
    """Crop the early feature map to patch m's quadrant, then upsample to the
    local grid (locals are encoded from 2x-upsampled crops, so their grid is
    twice the quadrant's)."""
    hh, hw = f_early.shape[-2] // 2, f_early.shape[-1] // 2
    row, col = divmod(m, 2)
    quad = f_early[:, row * hh : (row + 1) * hh, col * hw : (col + 1) * hw]
    return T.bilinear_resize(quad, sh, sw)


class LocalAdapter(Module):
    """One decoder round's fusion block (single-item maps, [C,S,S])."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.stage1 = MultiHeadAttention(dim, heads, rng)
        self.stage2 = MultiHeadAttention(dim, heads, rng)
        self.conf_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim, 1, 1)))
        self.conf_bias = Parameter(np.zeros(dim))

    def attend(
        self, f_out: Tensor, locals4: Sequence[Tensor], f_early: Tensor
    ) -> Tuple[Tensor, List[Tensor]]:
        """Two-stage fusion; returns (fused map, carry locals for next round)."""
        if len(locals4) != NUM_VIEWS:
            raise ShapeError(f"expected {NUM_VIEWS} local maps, got {len(locals4)}")
        c, sh, sw = f_out.shape
        kv_parts = []
        for m, loc in enumerate(locals4):
            if loc.shape != f_out.shape:
                raise ShapeError(f"local map {m} shape {loc.shape} != {f_out.shape}")
            enriched = T.add(loc, _early_quadrant(f_early, m, loc.shape[-2], loc.shape[-1]))
            kv_parts.append(_flatten(enriched))
        kv_seq = T.concat(kv_parts, axis=0)  # [4*S, C]
        q_seq = _flatten(f_out)  # [S, C]
        fused_seq = self.stage1(q_seq, kv_seq, kv_seq)
        fused = _unflatten(fused_seq, sh, sw)
        carry_seq = self.stage2(kv_seq, fused_seq, fused_seq)
        positions = sh * sw
        carry = [
            _unflatten(carry_seq[m * positions : (m + 1) * positions, :], sh, sw)
            for m in range(NUM_VIEWS)
        ]
        return fused, carry

    def fuse(self, f_out: Tensor, f_fused: Tensor) -> AdapterState:
        """Confidence-gated residual: f_out + sigmoid(conv1x1(f_out)) * fused."""
        if f_out.shape != f_fused.shape:
            raise ShapeError(f"{f_out.shape} vs {f_fused.shape}")
        gate = T.sigmoid(T.conv2d(f_out, self.conf_weight, self.conf_bias))
        confidence = T.mul(gate, f_fused)
        return AdapterState(
            f_fused=f_fused,
            confidence=confidence,
            f_out=f_out,
            f_updated=T.add(f_out, confidence),
        )

    def run(
        self, f_out: Tensor, locals4: Sequence[Tensor], f_early: Tensor
    ) -> Tuple[AdapterState, List[Tensor]]:
        fused, carry = self.attend(f_out, locals4, f_early)
        return self.fuse(f_out, fused), carry

    def zero_output_paths(self) -> "LocalAdapter":
        """Zero the stage-1 output projection so every fused map (and thus
        every confidence contribution) is exactly zero; test/baseline hook."""
        self.stage1.out_proj.weight.data[...] = 0.0
        self.stage1.out_proj.bias.data[...] = 0.0
        return self


class AdapterStack(Module):
    """The two per-round adapters, namespaced round1/round2."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.round1 = LocalAdapter(dim, heads, rng)
        self.round2 = LocalAdapter(dim, heads, rng)

    @property
    def rounds(self) -> Tuple[LocalAdapter, LocalAdapter]:
        return (self.round1, self.round2)


def decode(
    block: TokenBlock,
    feats: Tensor,
    locals4: Sequence[Tensor],
    f_early: Tensor,
    decoder_layers: Sequence[DecoderLayer],
    adapters: AdapterStack,
    use_adapter: bool = True,
) -> Tuple[Tensor, Tensor, List[AdapterState]]:
    """Two rounds of (frozen decoder layer -> adapter) on one batch item.

    Round 2 consumes round 1's carry tokens as its local-feature input.
    Returns the final token rows, the fused feature map [C,S,S], and the
    per-round adapter states (empty when the adapter path is disabled).
    """
    c, sh, sw = feats.shape
    token_seq = block.concat()
    feats_seq = _flatten(feats)
    local_in = list(locals4)
    states: List[AdapterState] = []
    for layer, adapter in zip(decoder_layers, adapters.rounds):
        token_seq, feats_seq = layer(token_seq, feats_seq)
        if use_adapter:
            f_out = _unflatten(feats_seq, sh, sw)
            state, local_in = adapter.run(f_out, local_in, f_early)
            states.append(state)
            feats_seq = _flatten(state.f_updated)
    return token_seq, _unflatten(feats_seq, sh, sw), states
