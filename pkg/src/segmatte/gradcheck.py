"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = 1e-5


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(1, |a|, |n|); stable across magnitudes."""
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def max_gradient_error(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = DEFAULT_STEP,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn(*inputs)`` must return a scalar Tensor. Every element of every
    input with ``requires_grad`` is perturbed by +/- h and the loss is
    re-evaluated; the analytic gradient comes from one backward sweep.
    """
    loss = fn(*inputs)
    for t in inputs:
        t.zero_grad()
    loss.backward()
    analytic = [
        (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for t in inputs
        if t.requires_grad
    ]

    worst = 0.0
    checked = [t for t in inputs if t.requires_grad]
    for t, a_grad in zip(checked, analytic):
        flat = t.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*inputs).item()
            flat[i] = orig - h
            down = fn(*inputs).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(float(a_flat[i]), numeric))
    return worst
