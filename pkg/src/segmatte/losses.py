"""Training losses: pixel/region/structure terms for masks, plus matte terms.

The segmentation objective is BCE + soft-IoU + SSIM; the matting objective
is L1 + SSIM + Sobel-gradient + Laplacian-pyramid. The two are combined by
an alternating task schedule: a batch contributes only its own task's terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ContractError, ParameterError, ShapeError, Tensor

BCE_CLAMP = 1e-7
IOU_EPS = 1e-6
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def _pair(pred: Tensor, gt) -> tuple[Tensor, Tensor]:
    if not isinstance(gt, Tensor):
        gt = Tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {gt.shape}")
    return pred, gt


def bce_loss(pred: Tensor, gt) -> Tensor:
    """Mean binary cross-entropy; predictions clamped away from {0, 1}."""
    pred, gt = _pair(pred, gt)
    p = T.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one = Tensor(1.0)
    term = T.add(T.mul(gt, T.log(p)), T.mul(T.sub(one, gt), T.log(T.sub(one, p))))
    return T.neg(T.tmean(term))


def soft_iou_loss(pred: Tensor, gt) -> Tensor:
    """1 - (intersection + eps) / (union + eps) on soft maps."""
    pred, gt = _pair(pred, gt)
    inter = T.tsum(T.mul(pred, gt))
    union = T.sub(T.add(T.tsum(pred), T.tsum(gt)), inter)
    eps = Tensor(IOU_EPS)
    return T.sub(Tensor(1.0), T.div(T.add(inter, eps), T.add(union, eps)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g1, g1)
    return win / win.sum()


def ssim_loss(pred: Tensor, gt) -> Tensor:
    """1 - mean SSIM over valid Gaussian windows (dynamic range 1)."""
    pred, gt = _pair(pred, gt)
    h, w = pred.shape[-2], pred.shape[-1]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ParameterError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    win = gaussian_window()
    mu_p = T.correlate2d(pred, win)
    mu_g = T.correlate2d(gt, win)
    var_p = T.sub(T.correlate2d(T.square(pred), win), T.square(mu_p))
    var_g = T.sub(T.correlate2d(T.square(gt), win), T.square(mu_g))
    cov = T.sub(T.correlate2d(T.mul(pred, gt), win), T.mul(mu_p, mu_g))
    c1, c2 = Tensor(SSIM_C1), Tensor(SSIM_C2)
    num = T.mul(
        T.add(T.mul(Tensor(2.0), T.mul(mu_p, mu_g)), c1),
        T.add(T.mul(Tensor(2.0), cov), c2),
    )
    den = T.mul(
        T.add(T.add(T.square(mu_p), T.square(mu_g)), c1),
        T.add(T.add(var_p, var_g), c2),
    )
    return T.sub(Tensor(1.0), T.tmean(T.div(num, den)))


def _sobel_magnitude(x: Tensor) -> Tensor:
    padded = T.pad2d(x, 1, "edge")
    gx = T.correlate2d(padded, SOBEL_X)
    gy = T.correlate2d(padded, SOBEL_Y)
    # small floor keeps sqrt differentiable where both responses vanish
    return T.sqrt(T.add(T.add(T.square(gx), T.square(gy)), Tensor(1e-12)))


def gradient_loss(pred: Tensor, gt) -> Tensor:
    """Mean L1 distance between 3x3 Sobel gradient magnitudes.

    Borders use replicate padding so that constant maps have exactly zero
    gradient response everywhere.
    """
    pred, gt = _pair(pred, gt)
    return T.tmean(T.absolute(T.sub(_sobel_magnitude(pred), _sobel_magnitude(gt))))


def _pyramid(x: Tensor, levels: int) -> list[Tensor]:
    """Band-pass levels 0..L-2 plus the low-pass residual as level L-1."""
    bands = []
    current = x
    for _ in range(levels - 1):
        down = T.avg_pool2d(current, 2)
        up = T.bilinear_resize(down, current.shape[-2], current.shape[-1])
        bands.append(T.sub(current, up))
        current = down
    bands.append(current)
    return bands


def laplacian_loss(pred: Tensor, gt, levels: int = 3) -> Tensor:
    """Sum over pyramid levels of 2^i * mean-L1 between band decompositions."""
    pred, gt = _pair(pred, gt)
    h, w = pred.shape[-2], pred.shape[-1]
    factor = 2 ** (levels - 1)
    if h % factor or w % factor:
        raise ParameterError(f"dims {h}x{w} not divisible by 2^{levels - 1}")
    total = Tensor(0.0)
    for i, (bp, bg) in enumerate(zip(_pyramid(pred, levels), _pyramid(gt, levels))):
        level = T.tmean(T.absolute(T.sub(bp, bg)))
        total = T.add(total, T.mul(Tensor(float(2**i)), level))
    return total


def l1_loss(pred: Tensor, gt) -> Tensor:
    pred, gt = _pair(pred, gt)
    return T.tmean(T.absolute(T.sub(pred, gt)))


@dataclass
class LossBreakdown:
    """Per-term loss record for one training step; inactive terms are zero."""

    bce: float = 0.0
    iou: float = 0.0
    ssim_seg: float = 0.0
    l1: float = 0.0
    ssim_mat: float = 0.0
    grad: float = 0.0
    laplacian: float = 0.0
    seg_total: float = 0.0
    matting_total: float = 0.0
    total: float = 0.0
    tensor_total: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def to_json_line(self, **extra) -> str:
        record = dict(extra)
        for key in (
            "bce",
            "iou",
            "ssim_seg",
            "l1",
            "ssim_mat",
            "grad",
            "laplacian",
            "seg_total",
            "matting_total",
            "total",
        ):
            record[key] = getattr(self, key)
        return json.dumps(record)


def composite_loss(task: str, prediction: Tensor, target, levels: int = 3) -> LossBreakdown:
    """Task-gated objective: ``seg`` -> BCE+IoU+SSIM, ``matte`` -> L1+SSIM+Grad+Laplacian.

    The returned breakdown carries the differentiable total in
    ``tensor_total``; float fields mirror it for logging.
    """
    if task not in ("seg", "matte"):
        raise ContractError(f"unknown task {task!r}")
    if target is None:
        raise ContractError(f"missing target for task {task!r}")
    if task == "seg":
        bce = bce_loss(prediction, target)
        iou = soft_iou_loss(prediction, target)
        ssim = ssim_loss(prediction, target)
        total = T.add(T.add(bce, iou), ssim)
        return LossBreakdown(
            bce=bce.item(),
            iou=iou.item(),
            ssim_seg=ssim.item(),
            seg_total=total.item(),
            total=total.item(),
            tensor_total=total,
        )
    l1 = l1_loss(prediction, target)
    ssim = ssim_loss(prediction, target)
    grad = gradient_loss(prediction, target)
    lap = laplacian_loss(prediction, target, levels=levels)
    total = T.add(T.add(T.add(l1, ssim), grad), lap)
    return LossBreakdown(
        l1=l1.item(),
        ssim_mat=ssim.item(),
        grad=grad.item(),
        laplacian=lap.item(),
        matting_total=total.item(),
        total=total.item(),
        tensor_total=total,
    )
