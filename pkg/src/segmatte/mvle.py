"""Multi-view localization: crop four local views, encode them at full
resolution through the shared frozen encoder, pool the global feature at
several receptive fields, and align each local view to its pooled quadrant
with per-patch cross-attention.

Patch/quadrant order is fixed as TL, TR, BL, BR throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .backbone import ImageEncoder
from .nn import Module, MultiHeadAttention
from .tensor import ParameterError, ShapeError, Tensor

DEFAULT_POOL_RFS = (4, 8, 16)
NUM_VIEWS = 4


@dataclass
class ViewSet:
    """The global image plus its four non-overlapping local crops."""

    global_view: Tensor  # [B,3,H,W]
    locals: List[Tensor]  # four [B,3,H/2,W/2] tensors, TL TR BL BR


@dataclass
class PooledContext:
    """Multi-scale pooled global features, partitioned into four quadrants."""

    pooled: Tensor  # [B,C,S_h,S_w]

    def quadrant(self, m: int) -> Tensor:
        b, c, sh, sw = self.pooled.shape
        hh, hw = sh // 2, sw // 2
        row, col = divmod(m, 2)
        return self.pooled[:, :, row * hh : (row + 1) * hh, col * hw : (col + 1) * hw]


def crop_views(image: Tensor) -> ViewSet:
    """Lossless 2x2 partition; dims must be divisible by 32 so every
    upsampled patch stays encodable at stride 16."""
    if image.ndim != 4:
        raise ShapeError(f"expected [B,3,H,W], got {image.shape}")
    _, _, h, w = image.shape
    if h % 32 or w % 32:
        raise ShapeError(f"spatial dims {h}x{w} must be divisible by 32")
    hh, hw = h // 2, w // 2
    patches = [
        image[:, :, :hh, :hw],
        image[:, :, :hh, hw:],
        image[:, :, hh:, :hw],
        image[:, :, hh:, hw:],
    ]
    return ViewSet(global_view=image, locals=patches)


def stitch_views(views: ViewSet) -> Tensor:
    """Inverse of crop_views; used to assert the partition identity."""
    tl, tr, bl, br = views.locals
    top = T.concat([tl, tr], axis=3)
    bottom = T.concat([bl, br], axis=3)
    return T.concat([top, bottom], axis=2)


def encode_views(views: ViewSet, encoder: ImageEncoder) -> Tensor:
    """Upsample each local crop to full resolution, encode, stack: [B,4,C,S,S]."""
    _, _, h, w = views.global_view.shape
    layers = []
    for patch in views.locals:
        upsampled = T.bilinear_resize(patch, h, w)
        feats = encoder.encode(upsampled)
        b, c, sh, sw = feats.f_global.shape
        layers.append(T.reshape(feats.f_global, (b, 1, c, sh, sw)))
    return T.concat(layers, axis=1)


def pool_multiscale(f_global: Tensor, rfs: Sequence[int] = DEFAULT_POOL_RFS) -> PooledContext:
    """Average-pool at each receptive field, resize back, mean across scales.

    Receptive fields larger than the feature map are dropped with a warning
    so the paper-scale defaults stay usable on toy resolutions.
    """
    if f_global.ndim != 4:
        raise ShapeError(f"expected [B,C,S,S], got {f_global.shape}")
    _, _, sh, sw = f_global.shape
    usable = [rf for rf in rfs if rf <= min(sh, sw)]
    dropped = [rf for rf in rfs if rf > min(sh, sw)]
    if dropped:
        warnings.warn(
            f"pooling fields {dropped} exceed feature size {sh}x{sw}; dropped",
            RuntimeWarning,
            stacklevel=2,
        )
    if not usable:
        raise ParameterError(f"no usable pooling fields among {tuple(rfs)} for {sh}x{sw}")
    scales = []
    for rf in usable:
        pooled = T.avg_pool2d(f_global, rf)
        scales.append(T.bilinear_resize(pooled, sh, sw))
    acc = scales[0]
    for extra in scales[1:]:
        acc = T.add(acc, extra)
    return PooledContext(pooled=T.mul(acc, Tensor(1.0 / len(scales))))


def _flatten_positions(fmap: Tensor) -> Tensor:
    """[C,S_h,S_w] -> [S_h*S_w, C] position-major."""
    c, sh, sw = fmap.shape
    return T.transpose(T.reshape(fmap, (c, sh * sw)))


class MultiViewLocalizer(Module):
    """Per-patch cross-attention: local positions query their pooled quadrant.

    Projections are per patch (not shared) and are the module's trainable
    parameters.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.attn = [MultiHeadAttention(dim, heads, rng) for _ in range(NUM_VIEWS)]

    def localize(self, f_local: Tensor, ctx: PooledContext) -> List[Tensor]:
        """f_local: [B,4,C,S,S] -> four aligned maps, each [B,C,S,S]."""
        if f_local.ndim != 5 or f_local.shape[1] != NUM_VIEWS:
            raise ShapeError(f"expected [B,4,C,S,S], got {f_local.shape}")
        b, _, c, sh, sw = f_local.shape
        if c != self.dim:
            raise ShapeError(f"channel dim {c} != localizer dim {self.dim}")
        outputs = []
        for m in range(NUM_VIEWS):
            quadrant = ctx.quadrant(m)
            per_item = []
            for i in range(b):
                queries = _flatten_positions(f_local[i, m])
                keys = _flatten_positions(quadrant[i])
                attended = self.attn[m](queries, keys, keys)
                per_item.append(T.reshape(T.transpose(attended), (1, c, sh, sw)))
            outputs.append(T.concat(per_item, axis=0))
        return outputs
