"""Parameter registry and the handful of layers the model is built from."""

from __future__ import annotations

import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Attribute-scanning parameter container (no buffers, no hooks)."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self

    def zero_all(self) -> "Module":
        """Zero every parameter in place (test hook for identity/baseline checks)."""
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def state_dict(self, prefix: str = "") -> Dict[str, Parameter]:
        return dict(self.named_parameters(prefix))


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))


class Linear(Module):
    """y = x W + b with x as [N, fan_in] rows."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Parameter(linear_init(rng, fan_in, fan_out))
        self.bias = Parameter(np.zeros(fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        rows = T.matmul(x, self.weight)
        bias_rows = T.expand(T.reshape(self.bias, (1, self.bias.size)), rows.shape)
        return T.add(rows, bias_rows)


class MLP(Module):
    """Two-layer perceptron with GELU on the hidden layer."""

    def __init__(self, fan_in: int, hidden: int, fan_out: int, rng: np.random.Generator):
        self.fc1 = Linear(fan_in, hidden, rng)
        self.fc2 = Linear(hidden, fan_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over [tokens, dim] sequences.

    Queries, keys and values get independent projections; logits are scaled
    by 1/sqrt(dim/heads); head outputs are concatenated and re-projected.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise T.ParameterError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self._last_weights: Optional[np.ndarray] = None

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        q = self.q_proj(q_in)
        k = self.k_proj(k_in)
        v = self.v_proj(v_in)
        scale = 1.0 / math.sqrt(self.head_dim)
        outs = []
        weights = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
            logits = T.mul(T.matmul(qh, T.transpose(kh)), Tensor(scale))
            attn = T.softmax(logits, axis=1)
            weights.append(attn.data)
            outs.append(T.matmul(attn, vh))
        self._last_weights = np.stack(weights)
        return self.out_proj(T.concat(outs, axis=1))

    @property
    def last_weights(self) -> Optional[np.ndarray]:
        """[heads, Tq, Tk] softmax weights from the most recent call."""
        return self._last_weights

    def pre_projection(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        """Head-concatenated attention output before the output projection."""
        q = self.q_proj(q_in)
        k = self.k_proj(k_in)
        v = self.v_proj(v_in)
        scale = 1.0 / math.sqrt(self.head_dim)
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            logits = T.mul(T.matmul(q[:, cols], T.transpose(k[:, cols])), Tensor(scale))
            outs.append(T.matmul(T.softmax(logits, axis=1), v[:, cols]))
        return T.concat(outs, axis=1)


class ChannelNorm2d(Module):
    """Per-channel normalization over the current batch with scale/shift.

    Statistics are taken over (batch, height, width) for each channel, so a
    batch of one degenerates to instance normalization. No running averages
    are kept: evaluation uses the same current-batch statistics, which keeps
    forward passes deterministic functions of their inputs.
    """

    EPS = 1e-5

    def __init__(self, channels: int):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self.channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise T.ShapeError(f"expected [B,{self.channels},H,W], got {x.shape}")
        mu = T.tmean(x, axis=(0, 2, 3), keepdims=True)
        centered = T.sub(x, T.expand(mu, x.shape))
        var = T.tmean(T.square(centered), axis=(0, 2, 3), keepdims=True)
        std = T.sqrt(T.add(var, Tensor(self.EPS)))
        normed = T.div(centered, T.expand(std, x.shape))
        gamma = T.expand(T.reshape(self.scale, (1, self.channels, 1, 1)), x.shape)
        beta = T.expand(T.reshape(self.shift, (1, self.channels, 1, 1)), x.shape)
        return T.add(T.mul(normed, gamma), beta)
