"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records its parents and, per parent, a function mapping the
upstream gradient to that parent's gradient. ``backward`` walks the graph in
reverse topological order; only leaves keep their gradients.
"""
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from src.utils.errors import NotScalar, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    def __init__(self, data, requires_grad: bool = False,
                 parents: Tuple["Tensor", ...] = (),
                 grad_fns: Tuple[Callable[[np.ndarray], np.ndarray], ...] = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._grad_fns = grad_fns

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # Operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents: Sequence[Tensor], grad_fns: Sequence[Callable]) -> Tensor:
    tracked = [(p, fn) for p, fn in zip(parents, grad_fns) if p.requires_grad]
    if not tracked:
        return Tensor(data)
    ps, fns = zip(*tracked)
    return Tensor(data, requires_grad=True, parents=tuple(ps), grad_fns=tuple(fns))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires gradients.

    Raises:
        NotScalar: If ``loss`` holds more than one element
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, fn in zip(node._parents, node._grad_fns):
            g = fn(grad)
            grads[id(parent)] = g if id(parent) not in grads else grads[id(parent)] + g


# Elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: -_unbroadcast(g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.shape), lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, (a, b),
                 (lambda g: _unbroadcast(g / b.data, a.shape),
                  lambda g: _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), (lambda g: -g,))


def tabs(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), (lambda g: g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), (lambda g: g / a.data,))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), (lambda g: g * (a.data > 0),))


def gelu(a: ArrayLike) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _make(x * cdf, (a,), (lambda g: g * (cdf + x * pdf),))


# Shape and reductions

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 (lambda g: _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape),
                  lambda g: _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)))


def tsum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), (grad_fn,))


def mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), (lambda g: g.reshape(a.shape),))


def transpose(a: ArrayLike, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), (lambda g: g.transpose(inverse),))


def getitem(a: ArrayLike, index) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return out

    return _make(a.data[index], (a,), (grad_fn,))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def slicer(i):
        def grad_fn(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(index)]
        return grad_fn

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tensors, [slicer(i) for i in range(len(tensors))])


# Fused ops

def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), (lambda g: out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat * gamma.data + beta.data

    def grad_input(g):
        gx = g * gamma.data
        n = a.shape[-1]
        return inv_std / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                              - x_hat * (gx * x_hat).sum(axis=-1, keepdims=True))

    return _make(out, (a, gamma, beta),
                 (grad_input,
                  lambda g: _unbroadcast(g * x_hat, gamma.shape),
                  lambda g: _unbroadcast(g, beta.shape)))


def conv2d(x: ArrayLike, weight: ArrayLike, bias: ArrayLike, stride: int = 2, padding: int = 1) -> Tensor:
    """2-D cross-correlation of (N, C, H, W) input with (O, C, kh, kw) kernels."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} does not match kernels {weight.shape}")
    _, _, kh, kw = weight.shape
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    out = np.einsum("nchwij,ocij->nohw", windows, weight.data) + bias.data[None, :, None, None]

    def grad_input(g):
        dwin = np.einsum("nohw,ocij->nchwij", g, weight.data)
        dpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                dpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[..., i, j]
        h, w = x.shape[2], x.shape[3]
        return dpad[:, :, padding:padding + h, padding:padding + w]

    return _make(out, (x, weight, bias),
                 (grad_input,
                  lambda g: np.einsum("nchwij,nohw->ocij", windows, g),
                  lambda g: g.sum(axis=(0, 2, 3))))
