"""Dense tensors with reverse-mode differentiation.

Every op returns a new Tensor that remembers its parents and a closure mapping
the output gradient to parent gradients. ``Tensor.backward`` walks that record
in reverse topological order and accumulates gradients into leaf tensors that
were created with ``requires_grad=True``.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from mesh_sar.exceptions import NumericalError

_state = threading.local()
_config = {"dtype": np.float64, "debug": False}

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def set_default_dtype(dtype) -> None:
    """Selects float64 (default) or float32 for newly created tensors."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"Unsupported dtype {dtype}; use float64 or float32.")
    _config["dtype"] = dtype.type


def get_default_dtype():
    return _config["dtype"]


def set_debug(enabled: bool) -> None:
    """In debug mode every op output is checked for NaN/Inf."""
    _config["debug"] = bool(enabled)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disables tape recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=get_default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulates d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        Raises:
            ValueError: self is not a scalar.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    # arithmetic sugar; the functional module holds the actual ops
    def __add__(self, other):
        from mesh_sar.numcore import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from mesh_sar.numcore import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from mesh_sar.numcore import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from mesh_sar.numcore import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from mesh_sar.numcore import functional as F

        return F.div(self, other)

    def __neg__(self):
        from mesh_sar.numcore import functional as F

        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from mesh_sar.numcore import functional as F

        return F.matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wraps an op output and records it on the tape when a parent needs gradients."""
    if _config["debug"] and not np.all(np.isfinite(data)):
        raise NumericalError(f"Non-finite values produced by {backward.__qualname__.split('.')[0]}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order
