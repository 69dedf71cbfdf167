"""Deterministic synthetic scenes: soft-alpha shapes composited over textures.

Every sample satisfies image = alpha*fg + (1-alpha)*bg exactly, with the
binary mask defined by alpha >= 0.5. Shapes are feathered superellipses so
the matting losses (gradient, Laplacian) see genuine soft boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backbone import PromptSet
from .pngio import save_gray, save_rgb
from .tensor import ShapeError

PROMPT_MODES = ("box", "points", "noisy_box", "coarse_mask")


class PromptModeError(RuntimeError):
    """Prompt sampling was asked for a mode its mask cannot support."""


@dataclass
class SynthSample:
    image: np.ndarray  # [3,H,W] in [0,1]
    alpha: np.ndarray  # [1,H,W] in [0,1]
    mask: np.ndarray  # [1,H,W] binary
    fg: np.ndarray  # [3,H,W]
    bg: np.ndarray  # [3,H,W]
    seed: int

    def reconstruction_error(self) -> float:
        recomposed = self.alpha * self.fg + (1.0 - self.alpha) * self.bg
        return float(np.max(np.abs(self.image - recomposed)))


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Pointwise alpha blend; alpha broadcasts over the channel axis."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape or fg.shape[-2:] != alpha.shape[-2:]:
        raise ShapeError(f"fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape}")
    if alpha.min() < 0.0 or alpha.max() > 1.0:
        raise ValueError("alpha values must lie in [0, 1]")
    return alpha * fg + (1.0 - alpha) * bg


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency color gradients plus mild noise, clipped to [0,1]."""
    coarse = rng.uniform(0.1, 0.9, size=(3, 4, 4))
    weights = _lin_weights(4, size)
    smooth = np.einsum("chw,ph,qw->cpq", coarse, weights, weights, optimize=True)
    noise = rng.normal(0.0, 0.03, size=(3, size, size))
    return np.clip(smooth + noise, 0.0, 1.0)


def _lin_weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for j in range(n_out):
        src = (j + 0.5) * scale - 0.5
        i0 = int(np.floor(src))
        frac = src - i0
        lo = min(max(i0, 0), n_in - 1)
        hi = min(max(i0 + 1, 0), n_in - 1)
        w[j, lo] += 1 - frac
        w[j, hi] += frac
    return w


def _shape_alpha(rng: np.random.Generator, size: int) -> np.ndarray:
    """One feathered superellipse: 1 inside, Gaussian falloff outside."""
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    ay = rng.uniform(0.12, 0.3) * size
    ax = rng.uniform(0.12, 0.3) * size
    theta = rng.uniform(0.0, np.pi)
    power = rng.uniform(2.0, 4.0)
    feather = rng.uniform(0.04, 0.12)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    ry = (np.cos(theta) * dy - np.sin(theta) * dx) / ay
    rx = (np.sin(theta) * dy + np.cos(theta) * dx) / ax
    r = (np.abs(ry) ** power + np.abs(rx) ** power) ** (1.0 / power)
    outside = np.maximum(r - 1.0, 0.0)
    return np.exp(-(outside**2) / (2.0 * feather**2))


def generate_sample(seed: int, size: int) -> SynthSample:
    """Fully seed-determined scene; size must be divisible by 32."""
    if size % 32 != 0 or size <= 0:
        raise ShapeError(f"size {size} must be a positive multiple of 32")
    rng = np.random.default_rng(seed)
    n_shapes = int(rng.integers(1, 4))
    alpha2d = np.zeros((size, size))
    for _ in range(n_shapes):
        alpha2d = np.maximum(alpha2d, _shape_alpha(rng, size))
    alpha = alpha2d[None]
    fg = _texture(rng, size)
    bg = _texture(rng, size)
    image = composite(fg, bg, alpha)
    mask = (alpha >= 0.5).astype(np.float64)
    return SynthSample(image=image, alpha=alpha, mask=mask, fg=fg, bg=bg, seed=seed)


def _tight_box(mask2d: np.ndarray) -> tuple[float, float, float, float]:
    rows, cols = np.nonzero(mask2d)
    return float(cols.min()), float(rows.min()), float(cols.max()), float(rows.max())


def sample_prompts(mask: np.ndarray, seed: int, mode: str, k: int = 3) -> PromptSet:
    """Derive a user-interaction prompt from a binary mask.

    box: tight bounding box. points: k uniform draws from foreground pixels
    (fg labels). noisy_box: tight box with each edge jittered uniformly
    within +/-10% of the box side. coarse_mask: box plus the mask blurred by
    8x down/up resampling.
    """
    if mode not in PROMPT_MODES:
        raise PromptModeError(f"unknown prompt mode {mode!r}")
    mask2d = np.asarray(mask, dtype=np.float64)
    if mask2d.ndim == 3:
        mask2d = mask2d[0]
    h, w = mask2d.shape
    fg = mask2d >= 0.5
    if not fg.any():
        raise PromptModeError(f"mode {mode!r} requires a non-empty mask")
    rng = np.random.default_rng(seed)

    if mode == "points":
        rows, cols = np.nonzero(fg)
        picks = rng.integers(0, len(rows), size=k)
        points = [(float(cols[i]), float(rows[i]), "fg") for i in picks]
        return PromptSet(points=points, image_size=(h, w))

    x0, y0, x1, y1 = _tight_box(fg)
    if mode == "box":
        return PromptSet(box=(x0, y0, x1, y1), image_size=(h, w))

    if mode == "noisy_box":
        bw, bh = x1 - x0, y1 - y0
        jitter = rng.uniform(-0.1, 0.1, size=4)
        nx0 = np.clip(x0 + jitter[0] * bw, 0, w - 1)
        nx1 = np.clip(x1 + jitter[1] * bw, 0, w - 1)
        ny0 = np.clip(y0 + jitter[2] * bh, 0, h - 1)
        ny1 = np.clip(y1 + jitter[3] * bh, 0, h - 1)
        if nx1 <= nx0:
            nx0, nx1 = min(nx0, nx1), min(nx0, nx1) + 1.0
        if ny1 <= ny0:
            ny0, ny1 = min(ny0, ny1), min(ny0, ny1) + 1.0
        return PromptSet(box=(float(nx0), float(ny0), float(nx1), float(ny1)), image_size=(h, w))

    # coarse_mask: blur by 8x average-pool then bilinear upsample
    pooled = mask2d[: h // 8 * 8, : w // 8 * 8].reshape(h // 8, 8, w // 8, 8).mean(axis=(1, 3))
    wr = _lin_weights(h // 8, h)
    wc = _lin_weights(w // 8, w)
    blurred = wr @ pooled @ wc.T
    return PromptSet(
        box=(x0, y0, x1, y1),
        coarse_mask=blurred[None],
        image_size=(h, w),
    )


def dump_sample(sample: SynthSample, directory, stem: str, prompts: Optional[PromptSet] = None) -> None:
    """Write image/alpha/mask PNGs plus a prompt JSON sidecar."""
    save_rgb(f"{directory}/{stem}_image.png", sample.image)
    save_gray(f"{directory}/{stem}_alpha.png", sample.alpha[0])
    save_gray(f"{directory}/{stem}_mask.png", sample.mask[0])
    if prompts is not None:
        with open(f"{directory}/{stem}_prompts.json", "w") as fh:
            fh.write(json.dumps(prompts.to_json_dict(), sort_keys=True))
