"""Physics attention: nodes are softly assigned to a fixed number of slice tokens,
the slice tokens attend to each other, and the result is scattered back.

Cost is linear in the node count for a fixed number of slices.
"""

import math

import numpy as np

from mesh_sar.exceptions import ValidationError
from mesh_sar.numcore import functional as F
from mesh_sar.numcore.layers import Linear, Module, parameter
from mesh_sar.numcore.tensor import Tensor

SLICE_WEIGHT_EPS = 1e-12


def slice_weights(logits: Tensor, log_temperature: Tensor) -> Tensor:
    """Softmax over the slice axis of ``logits / tau`` with tau = exp(log_temperature).

    Args:
        logits: (..., N, P) slice logits.
        log_temperature: (..., N, 1) per-node log-temperature.

    Returns:
        Tensor: (..., N, P) weights, positive with rows summing to 1.
    """
    return F.softmax(F.mul(logits, F.exp(F.mul(log_temperature, -1.0))), axis=-1)


class PhysicsAttention(Module):
    """Multi-head physics attention over ``num_slices`` slice tokens.

    Example:
        >>> attn = PhysicsAttention(16, num_heads=4, num_slices=8, rng=np.random.default_rng(0))
        >>> attn(Tensor(np.zeros((2, 10, 16)))).shape
        (2, 10, 16)
    """

    def __init__(self, width: int, num_heads: int, num_slices: int, rng: np.random.Generator):
        if width % num_heads != 0:
            raise ValidationError(f"Width {width} is not divisible by {num_heads} heads.")
        if num_slices < 1:
            raise ValidationError(f"num_slices must be >= 1, got {num_slices}")
        self.width, self.num_heads, self.num_slices = width, num_heads, num_slices
        self.head_dim = width // num_heads
        bound = 1.0 / math.sqrt(self.head_dim)

        self.split = Linear(width, width, rng)
        self.slice_weight = parameter(rng.uniform(-bound, bound, (num_heads, self.head_dim, num_slices)))
        self.slice_bias = parameter(np.zeros((num_heads, 1, num_slices)))
        # tau = exp(0) = 1 until trained
        self.temperature_weight = parameter(np.zeros((num_heads, self.head_dim, 1)))
        self.temperature_bias = parameter(np.zeros((num_heads, 1, 1)))
        self.query = Linear(self.head_dim, self.head_dim, rng)
        self.key = Linear(self.head_dim, self.head_dim, rng)
        self.value = Linear(self.head_dim, self.head_dim, rng)
        self.out = Linear(self.head_dim, self.head_dim, rng)
        self.merge = Linear(width, width, rng)

    def split_heads(self, x: Tensor) -> Tensor:
        batch, nodes = x.shape[0], x.shape[1]
        v = F.reshape(self.split(x), (batch, nodes, self.num_heads, self.head_dim))
        return F.transpose(v, (0, 2, 1, 3))

    def weights(self, v: Tensor) -> Tensor:
        """(B, H, N, P) slice weights of head features ``v`` of shape (B, H, N, D)."""
        logits = F.add(F.matmul(v, self.slice_weight), self.slice_bias)
        log_temperature = F.add(F.matmul(v, self.temperature_weight), self.temperature_bias)
        return slice_weights(logits, log_temperature)

    def forward(self, x: Tensor) -> Tensor:
        batch, nodes = x.shape[0], x.shape[1]
        v = self.split_heads(x)
        w = self.weights(v)

        # slice tokens: weighted means of node features
        totals = F.reshape(F.sum(w, axis=-2), w.shape[:2] + (self.num_slices, 1))
        tokens = F.mul(F.matmul(F.transpose(w, (0, 1, 3, 2)), v), F.safe_reciprocal(totals, SLICE_WEIGHT_EPS))

        q, k, value = self.query(tokens), self.key(tokens), self.value(tokens)
        scores = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        mixed = self.out(F.matmul(F.softmax(scores, axis=-1), value))

        nodes_out = F.transpose(F.matmul(w, mixed), (0, 2, 1, 3))
        return self.merge(F.reshape(nodes_out, (batch, nodes, self.width)))
