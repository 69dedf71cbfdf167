"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Design constraints, chosen for desk-scale numerical verifiability:

* float64 everywhere, row-major (C-order) numpy storage;
* broadcasting is limited to exact-shape and scalar operands — anything
  else raises ``ShapeError`` instead of silently broadcasting;
* every exported operation validates that its output is finite;
* graph recording can be suspended with :func:`no_grad` (used for frozen
  submodules), and :meth:`Tensor.backward` walks the recorded graph in
  reverse topological order.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "ParameterError",
    "ContractError",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "square",
    "absolute",
    "sigmoid",
    "gelu",
    "tanh",
    "clamp",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "expand",
    "concat",
    "softmax",
    "bilinear_resize",
    "avg_pool2d",
    "conv2d",
    "pad2d",
    "correlate2d",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ParameterError(ValueError):
    """An operation parameter (kernel size, pooling factor, ...) is invalid."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Suspend graph recording; results inside are detached constants."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense float64 array plus an optional gradient buffer and graph link."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor holds non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward: Optional[Callable[[], None]] = None
        self._parents: tuple = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def full(shape: Sequence[int], value: float, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.full(tuple(shape), float(value)), requires_grad=requires_grad)

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    # -- autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Populates ``grad`` on every ``requires_grad`` leaf reachable from this
        node. Leaves with ``requires_grad=False`` never receive a buffer.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss tensor")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor outside any recorded graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


class Parameter(Tensor):
    """A tensor registered as a model parameter (trainable unless frozen)."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)
        # Parameters keep their trainability flag even when constructed
        # inside a no_grad() block (frozen modules are built that way).
        self.requires_grad = bool(requires_grad)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _make_node(data: np.ndarray, parents: Iterable[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_elementwise(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"shapes {a.shape} and {b.shape} are neither equal nor scalar")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Collapse a gradient onto a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.full(shape, np.sum(g))


# -- elementwise arithmetic -----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data + b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_reduce_to(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(out.grad, b.shape))

    out = _make_node(out_data, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data - b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_reduce_to(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-out.grad, b.shape))

    out = _make_node(out_data, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data * b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_reduce_to(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(out.grad * a.data, b.shape))

    out = _make_node(out_data, (a, b), backward)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data / b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_reduce_to(out.grad / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-out.grad * a.data / (b.data * b.data), b.shape))

    out = _make_node(out_data, (a, b), backward)
    return out


def neg(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(-out.grad)

    out = _make_node(-a.data, (a,), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product [M x K] @ [K x N] -> [M x N]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out = _make_node(out_data, (a, b), backward)
    return out


# -- pointwise functions ----------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * out_data)

    out = _make_node(out_data, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out = _make_node(out_data, (a,), backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 0.5 / out_data)

    out = _make_node(out_data, (a,), backward)
    return out


def square(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 2.0 * a.data)

    out = _make_node(a.data * a.data, (a,), backward)
    return out


def absolute(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * np.sign(a.data))

    out = _make_node(np.abs(a.data), (a,), backward)
    return out


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid_raw(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * out_data * (1.0 - out_data))

    out = _make_node(out_data, (a,), backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU via the tanh approximation 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    inner = np.array(x, dtype=np.float64)
    inner *= x  # x^2
    inner *= 0.044715
    inner += 1.0
    inner *= x  # x + 0.044715*x^3
    inner *= _GELU_C
    t = np.tanh(inner, out=inner)
    out_data = 1.0 + t
    out_data *= x
    out_data *= 0.5

    def backward():
        if a.requires_grad:
            dinner = x * x
            dinner *= 3 * 0.044715
            dinner += 1.0
            dinner *= _GELU_C
            da = 1.0 - t * t
            da *= dinner
            da *= x
            da += 1.0 + t
            da *= 0.5
            a._accumulate(out.grad * da)

    out = _make_node(out_data, (a,), backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - out_data * out_data))

    out = _make_node(out_data, (a,), backward)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)

    def backward():
        if a.requires_grad:
            mask = (a.data >= lo) & (a.data <= hi)
            a._accumulate(out.grad * mask)

    out = _make_node(out_data, (a,), backward)
    return out


# -- reductions -------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    out = _make_node(out_data, (a,), backward)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape) / count)

    out = _make_node(out_data, (a,), backward)
    return out


# -- structural ops -----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.shape))

    out = _make_node(a.data.reshape(shape), (a,), backward)
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.transpose(inverse))

    out = _make_node(a.data.transpose(axes), (a,), backward)
    return out


def _getitem(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    if np.isscalar(out_data):
        out_data = np.asarray(out_data)

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[key] += out.grad
            a._accumulate(g)

    out = _make_node(np.ascontiguousarray(out_data), (a,), backward)
    return out


def expand(a: Tensor, shape) -> Tensor:
    """Explicitly broadcast size-1 axes up to ``shape`` (grad sums back)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != a.ndim or any(
        s != d and d != 1 for s, d in zip(shape, a.shape)
    ):
        raise ShapeError(f"cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, d) in enumerate(zip(shape, a.shape)) if d == 1 and s != 1)

    def backward():
        if a.requires_grad:
            a._accumulate(np.sum(out.grad, axis=axes, keepdims=True) if axes else out.grad)

    out = _make_node(np.broadcast_to(a.data, shape).copy(), (a,), backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out_data.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(out.grad[tuple(idx)])

    out = _make_node(out_data, tensors, backward)
    return out


# -- softmax ------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError("softmax requires a non-empty axis")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = np.sum(g * out_data, axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    out = _make_node(out_data, (a,), backward)
    return out


# -- image kernels --------------------------------------------------------------------
#
# The image ops accept [C, H, W] or [B, C, H, W]; leading batch dims are
# handled uniformly and the documented 3-D contract is unchanged.


def _ensure_spatial(a: Tensor) -> None:
    if a.ndim not in (2, 3, 4):
        raise ShapeError(f"expected trailing [H,W] dims with <=2 lead dims, got {a.shape}")


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Dense [n_out, n_in] row-stochastic matrix for align-corners-false bilinear."""
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for j in range(n_out):
        src = (j + 0.5) * scale - 0.5
        i0 = math.floor(src)
        frac = src - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        w[j, i0c] += 1.0 - frac
        w[j, i1c] += frac
    return w


def _separable_map(x: np.ndarray, wr: np.ndarray, wc: np.ndarray) -> np.ndarray:
    """Apply row/col mixing matrices to the trailing two dims via two gemms."""
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    flat = np.ascontiguousarray(x).reshape(-1, h, w)
    rows = np.matmul(wr, flat)  # [N, H', w]
    cols = np.matmul(rows, wc.T)  # [N, H', W']
    return cols.reshape(*lead, wr.shape[0], wc.shape[0])


def bilinear_resize(a: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling (align_corners=False); constants map to constants."""
    _ensure_spatial(a)
    if out_h < 1 or out_w < 1:
        raise ShapeError("target dims must be >= 1")
    h, w = a.shape[-2], a.shape[-1]
    wr = _resize_weights(h, out_h)
    wc = _resize_weights(w, out_w)
    out_data = _separable_map(a.data, wr, wc)

    def backward():
        if a.requires_grad:
            a._accumulate(_separable_map(out.grad, wr.T, wc.T))

    out = _make_node(out_data, (a,), backward)
    return out


def avg_pool2d(a: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k window means; trailing remainder rows/cols dropped."""
    _ensure_spatial(a)
    h, w = a.shape[-2], a.shape[-1]
    if k < 1 or k > min(h, w):
        raise ParameterError(f"pooling factor {k} invalid for spatial dims {(h, w)}")
    oh, ow = h // k, w // k
    lead = a.shape[:-2]
    windows = a.data[..., : oh * k, : ow * k].reshape(*lead, oh, k, ow, k)
    out_data = windows.mean(axis=(-3, -1))

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            expanded = np.repeat(np.repeat(out.grad, k, axis=-2), k, axis=-1) / (k * k)
            g[..., : oh * k, : ow * k] = expanded
            a._accumulate(g)

    out = _make_node(out_data, (a,), backward)
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> tuple:
    """Patch matrix [B*OH*OW, Cin*kh*kw] for a stride-1 zero-padded window."""
    b, cin, h, wd = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # [B, Cin, OH, OW, kh, kw] -> [B, OH, OW, Cin, kh, kw], one contiguous copy
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b * oh * ow, cin * kh * kw), (b, oh, ow)


def _corr2d_raw(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Cross-correlation of x[B,Cin,H,W] with w[Cout,Cin,kh,kw], zero padding."""
    cout, _, kh, kw = w.shape
    cols, (b, oh, ow) = _im2col(x, kh, kw, pad)
    out = cols @ w.reshape(cout, -1).T  # [B*OH*OW, Cout] via one gemm
    return np.ascontiguousarray(out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d(a: Tensor, weight: Tensor, bias: Tensor, k: Optional[int] = None) -> Tensor:
    """Stride-1 cross-correlation with bias; k in {1, 3}, zero padding for k=3."""
    if a.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects [Cin,H,W] or [B,Cin,H,W], got {a.shape}")
    squeeze = a.ndim == 3
    w, bvec = _as_tensor(weight), _as_tensor(bias)
    if w.ndim != 4:
        raise ShapeError(f"conv weight must be [Cout,Cin,k,k], got {w.shape}")
    cout, cin, kh, kw = w.shape
    if k is None:
        k = kh
    if kh != k or kw != k or k not in (1, 3):
        raise ParameterError(f"unsupported kernel size {kh}x{kw}; only 1x1 and 3x3")
    if bvec.shape != (cout,):
        raise ShapeError(f"bias must be [Cout]={cout}, got {bvec.shape}")
    x = a.data[None] if squeeze else a.data
    if x.shape[1] != cin:
        raise ShapeError(f"input channels {x.shape[1]} != weight Cin {cin}")
    pad = k // 2
    cols, (nb, oh, ow) = _im2col(x, k, k, pad)
    out_flat = cols @ w.data.reshape(cout, -1).T
    out_data = np.ascontiguousarray(out_flat.reshape(nb, oh, ow, cout).transpose(0, 3, 1, 2))
    out_data += bvec.data[None, :, None, None]

    def backward():
        g = out.grad[None] if squeeze else out.grad
        if a.requires_grad:
            w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = _corr2d_raw(np.ascontiguousarray(g), w_flip, k - 1 - pad)
            a._accumulate(gx[0] if squeeze else gx)
        if w.requires_grad:
            g_flat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
            w._accumulate((g_flat.T @ cols).reshape(w.shape))
        if bvec.requires_grad:
            bvec._accumulate(g.sum(axis=(0, 2, 3)))

    out = _make_node(out_data[0] if squeeze else out_data, (a, w, bvec), backward)
    return out


def pad2d(a: Tensor, pad: int, mode: str = "zero") -> Tensor:
    """Pad the two trailing spatial dims; mode 'zero' or 'edge' (replicate)."""
    _ensure_spatial(a)
    if mode not in ("zero", "edge"):
        raise ParameterError(f"unknown pad mode {mode!r}")
    h, w = a.shape[-2], a.shape[-1]
    if mode == "zero":
        out_data = np.pad(a.data, [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)])

        def backward():
            if a.requires_grad:
                a._accumulate(out.grad[..., pad : pad + h, pad : pad + w])

    else:
        rows = np.clip(np.arange(-pad, h + pad), 0, h - 1)
        cols = np.clip(np.arange(-pad, w + pad), 0, w - 1)
        out_data = a.data[..., rows[:, None], cols[None, :]]

        def backward():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                lead = int(np.prod(a.shape[:-2], dtype=np.int64))
                gflat = g.reshape(lead, h, w)
                oflat = out.grad.reshape(lead, h + 2 * pad, w + 2 * pad)
                for n in range(lead):
                    np.add.at(gflat[n], (rows[:, None], cols[None, :]), oflat[n])
                a._accumulate(g)

    out = _make_node(out_data, (a,), backward)
    return out


def _shift_add_corr(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid correlation over trailing dims via weighted shifted slices."""
    kh, kw = kernel.shape
    oh = x.shape[-2] - kh + 1
    ow = x.shape[-1] - kw + 1
    out = np.zeros((*x.shape[:-2], oh, ow))
    for di in range(kh):
        for dj in range(kw):
            out += kernel[di, dj] * x[..., di : di + oh, dj : dj + ow]
    return out


def correlate2d(a: Tensor, kernel: np.ndarray) -> Tensor:
    """Valid cross-correlation with a constant (non-trainable) 2-D kernel.

    Applied per channel; output spatial dims shrink by kernel size - 1.
    Used by loss kernels that need windows outside conv2d's {1,3} contract.
    """
    _ensure_spatial(a)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    h, w = a.shape[-2], a.shape[-1]
    if kh > h or kw > w:
        raise ParameterError(f"kernel {kernel.shape} larger than image {(h, w)}")
    out_data = _shift_add_corr(a.data, kernel)

    def backward():
        if a.requires_grad:
            pads = [(0, 0)] * (a.ndim - 2) + [(kh - 1, kh - 1), (kw - 1, kw - 1)]
            gp = np.pad(out.grad, pads)
            a._accumulate(_shift_add_corr(gp, kernel[::-1, ::-1]))

    out = _make_node(out_data, (a,), backward)
    return out
