import numpy as np

from mesh_sar.numcore import functional as F
from mesh_sar.numcore.layers import MLP, LayerNorm, Module, parameter
from mesh_sar.numcore.tensor import Tensor
from mesh_sar.transolver.attention import PhysicsAttention


class TransolverBlock(Module):
    """Pre-norm block: x + attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, width: int, num_heads: int, num_slices: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(width)
        self.attention = PhysicsAttention(width, num_heads, num_slices, rng)
        self.norm2 = LayerNorm(width)
        self.mlp = MLP(width, width, width, rng, activation="gelu")

    def forward(self, x: Tensor) -> Tensor:
        x = F.add(x, self.attention(self.norm1(x)))
        return F.add(x, self.mlp(self.norm2(x)))


class Modulation(Module):
    """Gate, shift and scale (alpha, beta, gamma) of one sub-layer from a conditioning embedding.

    The values are learnable bases (0, 0, 1) plus a zero-initialised MLP of the
    embedding, so alpha is 0 and the sub-layer is switched off at initialisation.
    """

    def __init__(self, width: int, embedding_width: int, rng: np.random.Generator):
        self.width = width
        self.alpha = parameter(np.zeros(width))
        self.beta = parameter(np.zeros(width))
        self.gamma = parameter(np.ones(width))
        self.mlp = MLP(embedding_width, width, 3 * width, rng, activation="gelu", zero_last=True)

    def forward(self, embedding: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        delta = self.mlp(embedding)
        delta = F.reshape(delta, (delta.shape[0], 1, 3 * self.width))
        w = self.width
        return (
            F.add(self.alpha, F.narrow(delta, 0, w)),
            F.add(self.beta, F.narrow(delta, w, 2 * w)),
            F.add(self.gamma, F.narrow(delta, 2 * w, 3 * w)),
        )


def modulated_residual(x: Tensor, sublayer, modulation: Modulation, embedding: Tensor) -> Tensor:
    alpha, beta, gamma = modulation(embedding)
    h = F.add(F.mul(F.layer_norm(x), gamma), beta)
    return F.add(x, F.mul(alpha, sublayer(h)))


class AdaLNZeroBlock(Module):
    """Transolver block whose norms and residual gates are driven by an embedding.

    With ``use_attention=False`` only the MLP sub-layer is kept, which gives the
    nodewise block used by the nodewise sampler ablation.

    Args:
        width: Node feature width F_model.
        num_heads, num_slices: Physics-attention sizes.
        embedding_width: Width of the conditioning embedding.
        rng: Initialisation generator.
        use_attention: Keep the physics-attention sub-layer.
    """

    def __init__(
        self,
        width: int,
        num_heads: int,
        num_slices: int,
        embedding_width: int,
        rng: np.random.Generator,
        use_attention: bool = True,
    ):
        self.attention = PhysicsAttention(width, num_heads, num_slices, rng) if use_attention else None
        self.attention_modulation = Modulation(width, embedding_width, rng) if use_attention else None
        self.mlp = MLP(width, width, width, rng, activation="gelu")
        self.mlp_modulation = Modulation(width, embedding_width, rng)

    def forward(self, x: Tensor, embedding: Tensor) -> Tensor:
        """x: (B, N, F); embedding: (B, E) or (1, E)."""
        if self.attention is not None:
            x = modulated_residual(x, self.attention, self.attention_modulation, embedding)
        return modulated_residual(x, self.mlp, self.mlp_modulation, embedding)
