from typing import Callable, Sequence

import numpy as np

from mesh_sar.numcore.tensor import Tensor, no_grad


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the scalar ``fn()`` with respect to ``tensor``."""
    grad = np.zeros_like(tensor.data)
    flat, flat_grad = tensor.data.reshape(-1), grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = fn().item()
            flat[i] = original - step
            minus = fn().item()
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def gradient_errors(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5, floor: float = 1e-3
) -> list[float]:
    """Relative error between backward() and finite differences, one value per input.

    The error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` in the
    Frobenius norm; ``floor`` keeps vanishing gradients from inflating it.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    errors = []
    for t, a in zip(inputs, analytic):
        n = numerical_gradient(fn, t, step)
        scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        errors.append(float(np.linalg.norm(a - n) / scale))
    return errors
