"""Evaluation kernels for segmentation masks and alpha mattes.

Segmentation: max F-measure (beta^2 = 0.3, 256 thresholds), weighted
F-measure (beta^2 = 1), MAE, structure measure, enhanced alignment measure,
and mIoU. Matting: SAD and MSE, reported raw and in the conventional
benchmark scales (SAD/1000, MSE*1000).

All kernels take plain float arrays in [0,1]; predictions are resized
bilinearly to the ground-truth resolution before scoring (ground truth is
authoritative). Ground truth is binarized at 0.5 where a metric requires it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from .pngio import list_pngs, load_gray

FMAX_BETA_SQ = 0.3
THRESHOLDS = np.arange(256) / 255.0
_EPS = np.finfo(np.float64).eps

SEG_METRIC_NAMES = ("f_max", "f_weighted", "mae", "s_measure", "e_measure", "miou")
MATTE_METRIC_NAMES = ("sad", "mse", "sad_raw", "mse_raw")


def _binarize(gt: np.ndarray) -> np.ndarray:
    return np.asarray(gt, dtype=np.float64) >= 0.5


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


# -- pixel errors -----------------------------------------------------------------


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


@dataclass
class MattingErrors:
    sad_k: float
    mse_k: float
    sad_raw: float
    mse_raw: float


def matting_errors(pred: np.ndarray, gt: np.ndarray) -> MattingErrors:
    pred, gt = _check_pair(pred, gt)
    diff = pred - gt
    sad_raw = float(np.sum(np.abs(diff)))
    mse_raw = float(np.mean(diff * diff))
    return MattingErrors(sad_raw / 1000.0, mse_raw * 1000.0, sad_raw, mse_raw)


def miou(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    pred, gt = _check_pair(pred, gt)
    p = pred >= threshold
    g = _binarize(gt)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(p & g) / union)


# -- F-measures --------------------------------------------------------------------


def f_measure_max(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, np.ndarray]:
    """Max F over thresholds k/255; precision/recall 0/0 cases count as 0.

    Binarization is strict (pred > t) so that a binary prediction sweeps
    over exactly itself: an inverted mask scores 0 instead of picking up
    the degenerate all-ones mask at threshold zero.
    """
    pred, gt = _check_pair(pred, gt)
    g = _binarize(gt)
    n_fg = np.count_nonzero(g)
    curve = np.zeros(256)
    for k, t in enumerate(THRESHOLDS):
        p = pred > t
        tp = np.count_nonzero(p & g)
        n_pred = np.count_nonzero(p)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_fg if n_fg else 0.0
        denom = FMAX_BETA_SQ * prec + rec
        curve[k] = (1 + FMAX_BETA_SQ) * prec * rec / denom if denom else 0.0
    return float(curve.max()), curve


def _nearest_fg_lexicographic(
    gt_b: np.ndarray, dist: np.ndarray, radius: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Row/col index of the nearest foreground pixel for near-boundary background.

    Ties on squared distance are broken by row-major order of the foreground
    pixel. Only background pixels with Euclidean distance <= radius are
    resolved; the result is only ever read within the Gaussian spread window
    around foreground pixels, which that radius covers.
    """
    h, w = gt_b.shape
    rows_idx = np.zeros((h, w), dtype=np.int64)
    cols_idx = np.zeros((h, w), dtype=np.int64)
    fy, fx = np.nonzero(gt_b)
    by, bx = np.nonzero(~gt_b & (dist <= radius))
    if len(by) == 0 or len(fy) == 0:
        return rows_idx, cols_idx
    chunk = 4096
    for start in range(0, len(by), chunk):
        cy, cx = by[start : start + chunk], bx[start : start + chunk]
        d2 = (cy[:, None] - fy[None, :]) ** 2 + (cx[:, None] - fx[None, :]) ** 2
        best = np.argmin(d2, axis=1)  # first minimum = row-major tie-break
        rows_idx[cy, cx] = fy[best]
        cols_idx[cy, cx] = fx[best]
    return rows_idx, cols_idx


def _blur(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded correlation with a small square kernel."""
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(values, pad)
    view = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return np.einsum("hwij,ij->hw", view, kernel, optimize=True)


def _fw_gaussian(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def f_measure_weighted(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dependency-weighted F-measure (beta^2 = 1).

    Background errors are copied from the nearest foreground pixel before
    Gaussian spreading (sigma 5, 7x7), and weighted by a distance decay
    2 - exp(ln(0.5)/5 * d). All-background ground truth scores 0.
    """
    pred, gt = _check_pair(pred, gt)
    g = _binarize(gt)
    if not g.any():
        return 0.0
    e = np.abs(pred - g.astype(np.float64))
    dist = distance_transform_edt(~g)
    rows_idx, cols_idx = _nearest_fg_lexicographic(g, dist, radius=3 * math.sqrt(2.0))
    et = e.copy()
    bg = ~g
    et[bg] = e[rows_idx[bg], cols_idx[bg]]
    ea = _blur(et, _fw_gaussian())
    min_e_ea = e.copy()
    take = g & (ea < e)
    min_e_ea[take] = ea[take]
    b = np.ones_like(e)
    b[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[bg])
    ew = min_e_ea * b
    tpw = float(np.count_nonzero(g)) - float(ew[g].sum())
    fpw = float(ew[bg].sum())
    recall = 1.0 - float(np.mean(ew[g]))
    precision = tpw / (tpw + fpw + _EPS)
    return float(2 * precision * recall / (precision + recall + _EPS))


# -- structure measure ----------------------------------------------------------------


def _s_object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std())
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    xm, ym = float(p.mean()), float(g.mean())
    if n == 1:
        vx = vy = vxy = 0.0
    else:
        vx = float(((p - xm) ** 2).sum() / (n - 1))
        vy = float(((g - ym) ** 2).sum() / (n - 1))
        vxy = float(((p - xm) * (g - ym)).sum() / (n - 1))
    alpha = 4.0 * xm * ym * vxy
    beta = (xm * xm + ym * ym) * (vx + vy)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    if beta == 0.0:
        return 1.0
    return 0.0


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object-aware + (1-alpha) * region-aware.

    Degenerate ground truths use the conventional rules: all-background
    scores 1 - mean(pred), all-foreground scores mean(pred).
    """
    pred, gt = _check_pair(pred, gt)
    g = _binarize(gt)
    mu = float(g.mean())
    if mu == 0.0:
        return 1.0 - float(pred.mean())
    if mu == 1.0:
        return float(pred.mean())
    gf = g.astype(np.float64)

    s_obj = mu * _s_object_score(pred[g]) + (1 - mu) * _s_object_score(1.0 - pred[~g])

    rows, cols = np.nonzero(g)
    cy = int(round(float(rows.mean()) + 1.0))
    cx = int(round(float(cols.mean()) + 1.0))
    quadrants = (
        (slice(None, cy), slice(None, cx)),
        (slice(None, cy), slice(cx, None)),
        (slice(cy, None), slice(None, cx)),
        (slice(cy, None), slice(cx, None)),
    )
    total = g.size
    s_reg = 0.0
    for sl in quadrants:
        pq, gq = pred[sl], gf[sl]
        weight = pq.size / total
        if pq.size:
            s_reg += weight * _region_ssim(pq, gq)
    return max(0.0, alpha * s_obj + (1 - alpha) * s_reg)


# -- enhanced alignment measure ---------------------------------------------------------


def e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Enhanced alignment measure, averaged over 256 binarization thresholds.

    The grid is t = (k+1)/256, covering (0, 1], so a binary prediction is
    compared against itself at every threshold and a perfect prediction
    scores 1.
    """
    pred, gt = _check_pair(pred, gt)
    g = _binarize(gt).astype(np.float64)
    n_fg = g.sum()
    values = np.zeros(256)
    for k in range(256):
        p = (pred >= (k + 1) / 256.0).astype(np.float64)
        if n_fg == 0:
            enhanced = 1.0 - p
        elif n_fg == g.size:
            enhanced = p
        else:
            phi_g = g - g.mean()
            phi_p = p - p.mean()
            align = 2.0 * phi_g * phi_p / (phi_g**2 + phi_p**2 + _EPS)
            enhanced = (align + 1.0) ** 2 / 4.0
        values[k] = float(enhanced.mean())
    return float(values.mean())


# -- report assembly ---------------------------------------------------------------------


def seg_metrics(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    f_max, _ = f_measure_max(pred, gt)
    return {
        "f_max": f_max,
        "f_weighted": f_measure_weighted(pred, gt),
        "mae": mae(pred, gt),
        "s_measure": s_measure(pred, gt),
        "e_measure": e_measure(pred, gt),
        "miou": miou(pred, gt),
    }


def matte_metrics(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    err = matting_errors(pred, gt)
    return {
        "sad": err.sad_k,
        "mse": err.mse_k,
        "sad_raw": err.sad_raw,
        "mse_raw": err.mse_raw,
    }


@dataclass
class MetricReport:
    """Per-image metric values plus arithmetic-mean aggregates."""

    task: str
    per_image: List[Dict[str, object]] = field(default_factory=list)
    aggregate: Dict[str, float] = field(default_factory=dict)
    scored: int = 0
    skipped: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def metric_names(self) -> Tuple[str, ...]:
        return SEG_METRIC_NAMES if self.task == "seg" else MATTE_METRIC_NAMES

    def to_json(self) -> str:
        payload = {
            "task": self.task,
            "per_image": self.per_image,
            "aggregate": self.aggregate,
            "counts": {"scored": self.scored, "skipped": self.skipped},
            "warnings": self.warnings,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", *self.metric_names])
        for row in self.per_image:
            writer.writerow([row["name"], *(repr(row[m]) for m in self.metric_names)])
        if self.aggregate:
            writer.writerow(["aggregate", *(repr(self.aggregate[m]) for m in self.metric_names)])
        return buf.getvalue()


def evaluate_pairs(
    pairs: List[Tuple[str, np.ndarray, np.ndarray]], task: str
) -> MetricReport:
    """Score (name, pred, gt) triples; order-independent via name sorting."""
    if task not in ("seg", "matte"):
        raise ValueError(f"unknown task {task!r}")
    compute = seg_metrics if task == "seg" else matte_metrics
    report = MetricReport(task=task)
    for name, pred, gt in sorted(pairs, key=lambda item: item[0]):
        if pred.shape != gt.shape:
            pred = resize_to(pred, gt.shape)
        row: Dict[str, object] = {"name": name}
        row.update(compute(pred, gt))
        report.per_image.append(row)
    report.scored = len(report.per_image)
    if report.per_image:
        for m in report.metric_names:
            report.aggregate[m] = float(np.mean([row[m] for row in report.per_image]))
    return report


def resize_to(pred: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize (align_corners=False) of a 2-D map; gt stays untouched."""
    from .tensor import _resize_weights

    wr = _resize_weights(pred.shape[0], shape[0])
    wc = _resize_weights(pred.shape[1], shape[1])
    return wr @ pred @ wc.T


def evaluate_directories(pred_dir, gt_dir, task: str) -> MetricReport:
    """Score equally named PNGs from two directories; mismatches are skipped."""
    pred_names = set(list_pngs(pred_dir))
    gt_names = set(list_pngs(gt_dir))
    common = sorted(pred_names & gt_names)
    report_pairs = []
    for name in common:
        report_pairs.append((name, load_gray(f"{pred_dir}/{name}"), load_gray(f"{gt_dir}/{name}")))
    report = evaluate_pairs(report_pairs, task)
    for name in sorted(pred_names ^ gt_names):
        side = "gt" if name in pred_names else "pred"
        report.warnings.append(f"{name}: missing on {side} side, skipped")
    report.skipped = len(report.warnings)
    return report
