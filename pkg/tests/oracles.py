"""Brute-force reference implementations used as oracles by the test suite.

These deliberately avoid every shortcut taken by the package: loops instead
of vectorization, direct formula evaluation instead of shared kernels. They
must never import computation helpers from ``segmatte`` internals.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


def bilinear_point(row: np.ndarray, j: int, out_w: int) -> float:
    """Direct evaluation of align-corners-false sampling for a 1-D row."""
    w = row.shape[0]
    src = (j + 0.5) * (w / out_w) - 0.5
    i0 = math.floor(src)
    frac = src - i0
    lo = min(max(i0, 0), w - 1)
    hi = min(max(i0 + 1, 0), w - 1)
    return (1 - frac) * row[lo] + frac * row[hi]


def bilinear_resize_loops(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = img.shape
    out = np.zeros((c, out_h, out_w))
    for ch in range(c):
        for oy in range(out_h):
            for ox in range(out_w):
                sy = (oy + 0.5) * (h / out_h) - 0.5
                sx = (ox + 0.5) * (w / out_w) - 0.5
                y0, x0 = math.floor(sy), math.floor(sx)
                fy, fx = sy - y0, sx - x0
                acc = 0.0
                for dy, wy in ((0, 1 - fy), (1, fy)):
                    for dx, wx in ((0, 1 - fx), (1, fx)):
                        yy = min(max(y0 + dy, 0), h - 1)
                        xx = min(max(x0 + dx, 0), w - 1)
                        acc += wy * wx * img[ch, yy, xx]
                out[ch, oy, ox] = acc
    return out


def avg_pool_loops(img: np.ndarray, k: int) -> np.ndarray:
    c, h, w = img.shape
    oh, ow = h // k, w // k
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for di in range(k):
                    for dj in range(k):
                        s += img[ch, i * k + di, j * k + dj]
                out[ch, i, j] = s / (k * k)
    return out


def conv2d_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = k // 2
    out = np.zeros((cout, h, wd))
    for oc in range(cout):
        for i in range(h):
            for j in range(wd):
                acc = b[oc]
                for ic in range(cin):
                    for di in range(k):
                        for dj in range(k):
                            yy, xx = i + di - pad, j + dj - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += x[ic, yy, xx] * w[oc, ic, di, dj]
                out[oc, i, j] = acc
    return out


def gelu_tanh_closed_form(x: float) -> float:
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def bce_loops(p: np.ndarray, g: np.ndarray, clamp: float = 1e-7) -> float:
    total = 0.0
    for pv, gv in zip(p.reshape(-1), g.reshape(-1)):
        pv = min(max(pv, clamp), 1.0 - clamp)
        total += -(gv * math.log(pv) + (1 - gv) * math.log(1 - pv))
    return total / p.size


def soft_iou_loops(p: np.ndarray, g: np.ndarray, eps: float = 1e-6) -> float:
    inter = float(np.sum(p * g))
    union = float(np.sum(p) + np.sum(g) - inter)
    return 1.0 - (inter + eps) / (union + eps)


def gaussian_window_loops(size: int, sigma: float) -> np.ndarray:
    win = np.zeros((size, size))
    c = (size - 1) / 2.0
    for i in range(size):
        for j in range(size):
            win[i, j] = math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma**2))
    return win / win.sum()


def ssim_loops(p: np.ndarray, g: np.ndarray, size: int = 7, sigma: float = 1.5) -> float:
    """1 - mean SSIM over valid windows; explicit window loops."""
    c1, c2 = 0.01**2, 0.03**2
    win = gaussian_window_loops(size, sigma)
    h, w = p.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            wp = p[i : i + size, j : j + size]
            wg = g[i : i + size, j : j + size]
            mp, mg = np.sum(wp * win), np.sum(wg * win)
            vp = np.sum(wp * wp * win) - mp * mp
            vg = np.sum(wg * wg * win) - mg * mg
            cov = np.sum(wp * wg * win) - mp * mg
            vals.append(
                ((2 * mp * mg + c1) * (2 * cov + c2))
                / ((mp * mp + mg * mg + c1) * (vp + vg + c2))
            )
    return 1.0 - float(np.mean(vals))


def ssim_constant_closed_form(a: float, b: float) -> float:
    return 1.0 - (2 * a * b + 0.01**2) / (a * a + b * b + 0.01**2)


def sobel_magnitude_loops(x: np.ndarray) -> np.ndarray:
    """3x3 Sobel magnitude with replicate borders, direct per-pixel sums."""
    sx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    sy = sx.T
    h, w = x.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            gx = gy = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    yy = min(max(i + di, 0), h - 1)
                    xx = min(max(j + dj, 0), w - 1)
                    gx += x[yy, xx] * sx[di + 1, dj + 1]
                    gy += x[yy, xx] * sy[di + 1, dj + 1]
            out[i, j] = math.sqrt(gx * gx + gy * gy + 1e-12)
    return out


def gradient_loss_loops(p: np.ndarray, g: np.ndarray) -> float:
    return float(np.mean(np.abs(sobel_magnitude_loops(p) - sobel_magnitude_loops(g))))


def _down2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return x[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _up2(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return bilinear_resize_loops(x[None], out_h, out_w)[0]


def laplacian_loss_loops(p: np.ndarray, g: np.ndarray, levels: int = 3) -> float:
    def bands(x):
        result = []
        cur = x
        for _ in range(levels - 1):
            down = _down2(cur)
            result.append(cur - _up2(down, cur.shape[0], cur.shape[1]))
            cur = down
        result.append(cur)
        return result

    total = 0.0
    for i, (bp, bg) in enumerate(zip(bands(p), bands(g))):
        total += (2**i) * float(np.mean(np.abs(bp - bg)))
    return total


def f_beta_from_counts(tp: int, fp: int, fn: int, beta_sq: float = 0.3) -> float:
    prec = tp / (tp + fp) if (tp + fp) else 0.0
    rec = tp / (tp + fn) if (tp + fn) else 0.0
    denom = beta_sq * prec + rec
    return (1 + beta_sq) * prec * rec / denom if denom else 0.0


def f_max_loops(pred: np.ndarray, gt: np.ndarray) -> float:
    """Max F over 256 strict thresholds computed by explicit set counting."""
    g = gt >= 0.5
    best = 0.0
    for k in range(256):
        p = pred > k / 255.0
        tp = int(np.sum(p & g))
        fp = int(np.sum(p & ~g))
        fn = int(np.sum(~p & g))
        best = max(best, f_beta_from_counts(tp, fp, fn))
    return best


def f_weighted_loops(pred: np.ndarray, gt: np.ndarray) -> float:
    """Direct-definition weighted F: loops for nearest-fg, spreading, decay."""
    g = gt >= 0.5
    if not g.any():
        return 0.0
    h, w = g.shape
    e = np.abs(pred - g.astype(float))
    fg = [(i, j) for i in range(h) for j in range(w) if g[i, j]]

    dist = np.zeros((h, w))
    et = e.copy()
    for i in range(h):
        for j in range(w):
            if g[i, j]:
                continue
            best_d2, best_pix = None, None
            for (fi, fj) in fg:  # row-major order = lexicographic tie-break
                d2 = (i - fi) ** 2 + (j - fj) ** 2
                if best_d2 is None or d2 < best_d2:
                    best_d2, best_pix = d2, (fi, fj)
            dist[i, j] = math.sqrt(best_d2)
            et[i, j] = e[best_pix]

    win = gaussian_window_loops(7, 5.0)
    ea = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-3, 4):
                for dj in range(-3, 4):
                    yy, xx = i + di, j + dj
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += et[yy, xx] * win[di + 3, dj + 3]
            ea[i, j] = acc

    min_e_ea = e.copy()
    bweight = np.ones((h, w))
    for i in range(h):
        for j in range(w):
            if g[i, j] and ea[i, j] < e[i, j]:
                min_e_ea[i, j] = ea[i, j]
            if not g[i, j]:
                bweight[i, j] = 2.0 - math.exp(math.log(0.5) / 5.0 * dist[i, j])

    ew = min_e_ea * bweight
    eps = np.finfo(float).eps
    n_fg = len(fg)
    tpw = n_fg - float(ew[g].sum())
    fpw = float(ew[~g].sum())
    recall = 1.0 - float(ew[g].sum()) / n_fg
    precision = tpw / (tpw + fpw + eps)
    return 2 * precision * recall / (precision + recall + eps)


def s_measure_loops(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    g = gt >= 0.5
    mu = g.mean()
    if mu == 0.0:
        return 1.0 - pred.mean()
    if mu == 1.0:
        return float(pred.mean())
    eps = np.finfo(float).eps

    def object_score(vals):
        if vals.size == 0:
            return 0.0
        x, s = vals.mean(), vals.std()
        return 2 * x / (x * x + 1 + s + eps)

    s_obj = mu * object_score(pred[g]) + (1 - mu) * object_score(1 - pred[~g])

    rows = [i for i in range(g.shape[0]) for j in range(g.shape[1]) if g[i, j]]
    cols = [j for i in range(g.shape[0]) for j in range(g.shape[1]) if g[i, j]]
    cy = int(round(sum(rows) / len(rows) + 1))
    cx = int(round(sum(cols) / len(cols) + 1))

    def region_q(p, q):
        n = p.size
        if n == 0:
            return 0.0, 0.0
        xm, ym = p.mean(), q.mean()
        if n > 1:
            vx = ((p - xm) ** 2).sum() / (n - 1)
            vy = ((q - ym) ** 2).sum() / (n - 1)
            vxy = ((p - xm) * (q - ym)).sum() / (n - 1)
        else:
            vx = vy = vxy = 0.0
        a = 4 * xm * ym * vxy
        b = (xm * xm + ym * ym) * (vx + vy)
        if a != 0:
            return a / (b + eps), n / g.size
        return (1.0 if b == 0 else 0.0), n / g.size

    gf = g.astype(float)
    s_reg = 0.0
    for sl in [
        (slice(None, cy), slice(None, cx)),
        (slice(None, cy), slice(cx, None)),
        (slice(cy, None), slice(None, cx)),
        (slice(cy, None), slice(cx, None)),
    ]:
        q, wgt = region_q(pred[sl], gf[sl])
        s_reg += wgt * q
    return max(0.0, alpha * s_obj + (1 - alpha) * s_reg)


def e_measure_loops(pred: np.ndarray, gt: np.ndarray) -> float:
    g = (gt >= 0.5).astype(float)
    eps = np.finfo(float).eps
    n = g.size
    total = 0.0
    for k in range(256):
        p = (pred >= (k + 1) / 256.0).astype(float)
        if g.sum() == 0:
            enhanced = 1.0 - p
        elif g.sum() == n:
            enhanced = p
        else:
            pg, pp = g - g.mean(), p - p.mean()
            align = 2 * pg * pp / (pg * pg + pp * pp + eps)
            enhanced = (align + 1) ** 2 / 4
        total += enhanced.mean()
    return total / 256.0


def attention_loops(
    q_in: np.ndarray,
    k_in: np.ndarray,
    v_in: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    bq: np.ndarray,
    bk: np.ndarray,
    bv: np.ndarray,
    heads: int,
) -> np.ndarray:
    """Explicit QK^T/sqrt(d) -> softmax -> weighted-sum attention (pre out-proj)."""
    q = q_in @ wq + bq
    k = k_in @ wk + bk
    v = v_in @ wv + bv
    dim = q.shape[1]
    dh = dim // heads
    out = np.zeros((q.shape[0], dim))
    for h in range(heads):
        qs, ks, vs = (m[:, h * dh : (h + 1) * dh] for m in (q, k, v))
        logits = qs @ ks.T / math.sqrt(dh)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        out[:, h * dh : (h + 1) * dh] = attn @ vs
    return out
