"""Differentiable primitives.

Shapes follow numpy broadcasting; node-feature tensors are laid out as
(..., num_nodes, channels).
"""

import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from mesh_sar.numcore.tensor import Tensor, as_tensor, get_default_dtype, make_result

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
LAYER_NORM_EPS = 1e-5

Operand = Union[Tensor, float, np.ndarray]


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sums ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight + bias with weight of shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        flat_g = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ flat_g
        grads = [gx, gw]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ValueError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return make_result(out, tensors, backward)


def row_select(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``index`` of the node axis (-2)."""
    index = np.asarray(index, dtype=np.int64)
    num_rows = x.shape[-2]

    def backward(g):
        moved = np.moveaxis(g, -2, 0)
        acc = np.zeros((num_rows,) + moved.shape[1:], dtype=g.dtype)
        np.add.at(acc, index, moved)
        return (np.moveaxis(acc, 0, -2),)

    return make_result(np.take(x.data, index, axis=-2), (x,), backward)


def narrow(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """x[..., start:stop] along ``axis``."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(x.data[index].copy(), (x,), backward)


def scatter_add(x: Tensor, index: np.ndarray, num_rows: int) -> Tensor:
    """Sums rows of ``x`` (node axis -2) into ``num_rows`` buckets given by ``index``."""
    index = np.asarray(index, dtype=np.int64)
    moved = np.moveaxis(x.data, -2, 0)
    acc = np.zeros((num_rows,) + moved.shape[1:], dtype=x.data.dtype)
    np.add.at(acc, index, moved)

    def backward(g):
        return (np.take(g, index, axis=-2),)

    return make_result(np.moveaxis(acc, 0, -2), (x,), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inverse = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result(np.transpose(x.data, axes), (x,), backward)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        return (unbroadcast(g, x.shape),)

    return make_result(np.broadcast_to(x.data, shape).copy(), (x,), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_result(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        return (2.0 * g * x.data,)

    return make_result(x.data * x.data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g):
        return (0.5 * g / out,)

    return make_result(out, (x,), backward)


def selu(x: Tensor) -> Tensor:
    positive = x.data > 0
    exp_part = np.exp(np.minimum(x.data, 0.0))
    out = SELU_SCALE * np.where(positive, x.data, SELU_ALPHA * (exp_part - 1.0))

    def backward(g):
        return (g * SELU_SCALE * np.where(positive, 1.0, SELU_ALPHA * exp_part),)

    return make_result(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return make_result(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def layer_norm(
    x: Tensor,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalizes the last axis to mean 0 and variance 1, then applies weight/bias.

    ``eps`` floors the variance, so rows with variance >= eps are normalized
    exactly and constant rows map to zeros.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered**2, axis=-1, keepdims=True)
    degenerate = var < eps
    inv = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = centered * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gxhat = g * weight.data if weight is not None else g
        mean_g = gxhat.mean(axis=-1, keepdims=True)
        mean_gx = np.where(degenerate, 0.0, np.mean(gxhat * xhat, axis=-1, keepdims=True))
        grads = [inv * (gxhat - mean_g - xhat * mean_gx)]
        if weight is not None:
            grads.append(unbroadcast(g * xhat, weight.shape))
        if bias is not None:
            grads.append(unbroadcast(g, bias.shape))
        return grads

    parents = [x] + [p for p in (weight, bias) if p is not None]
    return make_result(out, parents, backward)


def safe_reciprocal(x: Tensor, eps: float = 1e-12) -> Tensor:
    """1 / x where x >= eps, and 0 elsewhere."""
    valid = x.data >= eps
    out = np.where(valid, 1.0 / np.where(valid, x.data, 1.0), 0.0)

    def backward(g):
        return (np.where(valid, -g * out * out, 0.0),)

    return make_result(out, (x,), backward)


def gaussian_noise(shape: tuple, sigma: float, rng: Union[np.random.Generator, int]) -> Tensor:
    """Constant N(0, sigma^2) tensor drawn from ``rng`` (a generator or a seed)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Tensor(sigma * rng.standard_normal(shape).astype(get_default_dtype()))
