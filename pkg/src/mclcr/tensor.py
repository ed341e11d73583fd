"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation creates a new :class:`Tensor` that records its
parents and a closure mapping the output gradient to parent gradients. Node
ids are drawn from a monotonically increasing counter, so creation order is a
topological order and :meth:`Tensor.backward` simply replays the reachable
nodes by descending id.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import erf

_ids = itertools.count()
_state = threading.local()

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity reached an op that cannot absorb it."""


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the reflected Tensor method

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = trace(self)
        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        for node in order:
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # never in-place: closures may hand the same array to several parents
                parent.grad = g if parent.grad is None else parent.grad + g
        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swap_last(self)


class Node(NamedTuple):
    op: str
    inputs: tuple[int, ...]
    tensor: Tensor


def trace(root: Tensor) -> list[Tensor]:
    """Reachable differentiable nodes of ``root``, consumers before producers."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen or not t.requires_grad:
            continue
        seen[t.node_id] = t
        stack.extend(t._parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def graph(root: Tensor) -> list[Node]:
    """The recorded graph of ``root`` in forward (topological) order."""
    return [Node(t.op, tuple(p.node_id for p in t._parents), t) for t in reversed(trace(root))]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, "div", (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    return _make(a.data ** exponent, "pow", (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    return _make(x * cdf, "gelu", (a,),
                 lambda g: (g * (cdf + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)),))


# -- reductions and shape ops ----------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return _make(out, "mean", (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), "transpose", (a,),
                 lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    return _make(np.swapaxes(a.data, -1, -2), "swap_last", (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, "matmul", (a, b), backward)


# -- normalization family --------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    x = a.data
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("softmax input contains non-finite entries")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return _make(out, "softmax", (a,),
                 lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


softmax_rows = softmax


def masked_logsumexp(a: Tensor, mask: np.ndarray) -> Tensor:
    """log(sum(exp(x))) over the last axis restricted to ``mask``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_logsumexp: a row has no selected entries")
    x = np.where(mask, a.data, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(x - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s))[..., 0]
    w = e / s
    return _make(out, "masked_logsumexp", (a,), lambda g: (g[..., None] * w,))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gamma, beta."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last axis {d} does not match gamma {gamma.shape} / beta {beta.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gamma.data + beta.data, "layer_norm", (a, gamma, beta), backward)


def l2_normalize(a: Tensor) -> Tensor:
    """Scale every row (last axis) to unit Euclidean norm."""
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("l2_normalize: zero-norm row")
    out = a.data / norm
    return _make(out, "l2_normalize", (a,),
                 lambda g: ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, "dropout", (a,), lambda g: (g * keep,))


# -- spatial ops (NHWC, batch axis optional) -------------------------------

def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank}, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           depthwise: bool = False) -> Tensor:
    """2-D cross-correlation over H x W x C (or B x H x W x C) inputs.

    ``kernel`` is kh x kw x Cin x Cout; with ``depthwise`` it is kh x kw x C x 1
    and each channel is correlated with its own filter.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, squeeze = _batched(x.data, 4)
    kh, kw, kc, cout = kernel.shape
    b, h, w, cin = xd.shape
    if kc != cin or (depthwise and cout != 1):
        raise ShapeError(f"conv2d: kernel {kernel.shape} incompatible with input channels {cin}"
                         f"{' (depthwise needs Cout=1)' if depthwise else ''}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1 or stride < 1:
        raise ShapeError(f"conv2d: invalid geometry, output extents would be {ho}x{wo} "
                         f"(input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding})")
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
    K = kernel.data
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1

    def window(i, j):
        return xp[:, i:i + span_h:stride, j:j + span_w:stride, :]

    out = np.zeros((b, ho, wo, cin if depthwise else cout))
    for i in range(kh):
        for j in range(kw):
            out += window(i, j) * K[i, j, :, 0] if depthwise else window(i, j) @ K[i, j]

    def backward(g):
        g4 = g[None] if squeeze else g
        need_x = x.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        gk = np.zeros_like(K)
        for i in range(kh):
            for j in range(kw):
                win = window(i, j)
                sl = (slice(None), slice(i, i + span_h, stride), slice(j, j + span_w, stride))
                if depthwise:
                    gk[i, j, :, 0] = (g4 * win).sum(axis=(0, 1, 2))
                    if need_x:
                        gxp[sl] += g4 * K[i, j, :, 0]
                else:
                    gk[i, j] = win.reshape(-1, cin).T @ g4.reshape(-1, cout)
                    if need_x:
                        gxp[sl] += g4 @ K[i, j].T
        if not need_x:
            return None, gk
        gx = gxp[:, padding:padding + h, padding:padding + w, :] if padding else gxp
        return (gx[0] if squeeze else gx), gk

    return _make(out[0] if squeeze else out, "conv2d", (x, kernel), backward)


def max_pool2d(x: Tensor) -> Tensor:
    """Non-overlapping 2 x 2 max pooling; ties route the gradient to the first maximum."""
    xd, squeeze = _batched(x.data, 4)
    b, h, w, c = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even extents, got {h}x{w}")
    blocks = xd.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        g4 = g[None] if squeeze else g
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g4[..., None], axis=-1)
        gx = gb.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        return (gx[0] if squeeze else gx),

    return _make(out[0] if squeeze else out, "max_pool2d", (x,), backward)


def global_avg_pool(x: Tensor, batched: bool = False) -> Tensor:
    """Mean over every axis except the channel axis (and the batch axis if ``batched``).

    Accepts H x W x C or N x D maps (rank 3 / 2), or the same with a leading batch axis.
    """
    lo = 1 if batched else 0
    if x.ndim - lo not in (2, 3):
        raise ShapeError(f"global_avg_pool expects rank {2 + lo} or {3 + lo}, got shape {x.shape}")
    return mean(x, axis=tuple(range(lo, x.ndim - 1)))


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
