"""Graph VAE with two message-passing layers in the encoder and in the decoder.

Latents keep one vector per node; the decoder reads the latents together with
the edge displacements and maps them back to the physical channels.
"""

from typing import Union

import numpy as np

from mesh_sar.meshgraph.meshgraph import MeshGraph
from mesh_sar.numcore import functional as F
from mesh_sar.numcore.layers import MLP, LayerNorm, Linear, Module
from mesh_sar.numcore.tensor import Tensor, as_tensor

NUM_MP_LAYERS = 2
DEFAULT_KL_WEIGHT = 1e-6


class MessagePassingLayer(Module):
    """Edge update, sum over incoming edges, node update; both with linear residuals.

    e_ij <- W_e e_ij + MLP_e(LN([e_ij | v_i | v_j]))
    v_j  <- W_v v_j  + MLP_v(LN([sum_i e_ij | v_j]))
    """

    def __init__(self, width: int, rng: np.random.Generator):
        self.edge_norm = LayerNorm(3 * width)
        self.edge_mlp = MLP(3 * width, width, width, rng, activation="selu")
        self.edge_residual = Linear(width, width, rng, bias=False)
        self.node_norm = LayerNorm(2 * width)
        self.node_mlp = MLP(2 * width, width, width, rng, activation="selu")
        self.node_residual = Linear(width, width, rng, bias=False)

    def forward(self, nodes: Tensor, edge_feats: Tensor, edges: np.ndarray) -> tuple[Tensor, Tensor]:
        """nodes: (B, N, W); edge_feats: (B, E, W); edges: (E, 2) source/target indices."""
        senders = F.row_select(nodes, edges[:, 0])
        receivers = F.row_select(nodes, edges[:, 1])
        edge_input = self.edge_norm(F.concat([edge_feats, senders, receivers], axis=-1))
        edge_feats = F.add(self.edge_residual(edge_feats), self.edge_mlp(edge_input))

        incoming = F.scatter_add(edge_feats, edges[:, 1], nodes.shape[-2])
        node_input = self.node_norm(F.concat([incoming, nodes], axis=-1))
        nodes = F.add(self.node_residual(nodes), self.node_mlp(node_input))
        return nodes, edge_feats


class GraphCoder(Module):
    """Lifts node and edge inputs, runs the message-passing stack, projects node features."""

    def __init__(self, node_in: int, edge_in: int, width: int, out: int, rng: np.random.Generator):
        self.node_lift = Linear(node_in, width, rng)
        self.edge_lift = Linear(edge_in, width, rng)
        self.layers = [MessagePassingLayer(width, rng) for _ in range(NUM_MP_LAYERS)]
        self.norm = LayerNorm(width)
        self.head = Linear(width, out, rng)

    def forward(self, node_inputs: Tensor, graph: MeshGraph) -> Tensor:
        nodes = self.node_lift(node_inputs)
        edge_feats = self.edge_lift(Tensor(graph.edge_displacements))
        edge_feats = F.broadcast_to(edge_feats, (nodes.shape[0],) + edge_feats.shape)
        for layer in self.layers:
            nodes, edge_feats = layer(nodes, edge_feats, graph.edges)
        return self.head(self.norm(nodes))


class VaeModel(Module):
    """Per-node Gaussian VAE on a mesh graph.

    Args:
        num_channels: Physical channels F.
        dim: Spatial dimension of edge displacements.
        width: Hidden width F_VAE.
        latent_width: Latent channels F_L.
        rng: Initialisation generator.
    """

    def __init__(self, num_channels: int, dim: int, width: int, latent_width: int, rng: np.random.Generator):
        self.num_channels, self.latent_width = num_channels, latent_width
        self.encoder = GraphCoder(num_channels, dim, width, 2 * latent_width, rng)
        self.decoder = GraphCoder(latent_width, dim, width, num_channels, rng)

    def encode(self, graph: MeshGraph, values: Union[Tensor, np.ndarray]) -> tuple[Tensor, Tensor]:
        """(mu, log_sigma), each (B, N, F_L), from physical values of shape (B, N, F)."""
        out = self.encoder(as_tensor(values), graph)
        return F.narrow(out, 0, self.latent_width), F.narrow(out, self.latent_width, 2 * self.latent_width)

    def decode(self, graph: MeshGraph, latents: Union[Tensor, np.ndarray]) -> Tensor:
        return self.decoder(as_tensor(latents), graph)


def reparameterize(
    mu: Tensor,
    log_sigma: Tensor,
    rng: Union[np.random.Generator, int, None] = None,
    deterministic: bool = False,
) -> Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I); ``deterministic`` returns mu."""
    if deterministic:
        return mu
    eps = F.gaussian_noise(mu.shape, 1.0, rng)
    return F.add(mu, F.mul(F.exp(log_sigma), eps))


def kl_divergence(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Node-mean KL(N(mu, sigma^2) || N(0, 1)) summed over latent channels."""
    per_entry = F.sub(
        F.add(F.square(mu), F.exp(F.mul(log_sigma, 2.0))), F.add(F.mul(log_sigma, 2.0), 1.0)
    )
    num_nodes = float(np.prod(mu.shape[:-1]))
    return F.mul(F.sum(per_entry), 0.5 / num_nodes)


def vae_loss(
    x: Tensor,
    x_rec: Tensor,
    mu: Tensor,
    log_sigma: Tensor,
    kl_weight: float = DEFAULT_KL_WEIGHT,
) -> Tensor:
    """Mean squared reconstruction error plus ``kl_weight`` times the node-mean KL."""
    if x.shape != x_rec.shape:
        raise ValueError(f"vae_loss: reconstruction shape {x_rec.shape} != input shape {x.shape}")
    reconstruction = F.mean(F.square(F.sub(x_rec, x)))
    return F.add(reconstruction, F.mul(kl_divergence(mu, log_sigma), kl_weight))
