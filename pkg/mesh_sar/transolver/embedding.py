import math

import numpy as np

from mesh_sar.exceptions import ValidationError
from mesh_sar.numcore.tensor import Tensor

MAX_PERIOD = 10000.0


def frequencies(width: int) -> np.ndarray:
    """omega_n = exp(-log(10000) n / (M - 1)) for n = 0..M-1, M = width / 2."""
    if width < 2 or width % 2 != 0:
        raise ValidationError(f"Embedding width must be even and >= 2, got {width}")
    half = width // 2
    if half == 1:
        return np.ones(1)
    return np.exp(-math.log(MAX_PERIOD) * np.arange(half) / (half - 1))


def sinusoidal_embedding(r, width: int) -> Tensor:
    """Embeds denoising times ``r`` in [0, 1] as [sin(omega r), cos(omega r)].

    Args:
        r: Scalar or (B,) array of times.
        width: Embedding width, even.

    Returns:
        Tensor: (B, width) constant tensor.

    Raises:
        ValidationError: odd width or r outside [0, 1].
    """
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if np.any(r < 0) or np.any(r > 1):
        raise ValidationError(f"Denoising times must lie in [0, 1], got {r.min()}..{r.max()}")
    args = r[:, None] * frequencies(width)[None, :]
    return Tensor(np.concatenate([np.sin(args), np.cos(args)], axis=-1))
