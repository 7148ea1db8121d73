"""Scale-autoregressive model: condition encoder, autoregressive module and
flow-matching sampler sharing one hidden width F_model.

All networks take node tensors of shape (B, N, width). The condition encoder
output Y depends only on the graph and hierarchy, so it is computed once per
system and reused by every scale and every sample.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mesh_sar.config.run_config import ModelConfig
from mesh_sar.exceptions import ValidationError
from mesh_sar.hierarchy.hierarchy import ScaleHierarchy, scale_onehot
from mesh_sar.meshgraph.meshgraph import MeshGraph
from mesh_sar.numcore import functional as F
from mesh_sar.numcore.layers import MLP, LayerNorm, Linear, Module, parameter
from mesh_sar.numcore.tensor import Tensor, as_tensor
from mesh_sar.transolver.blocks import AdaLNZeroBlock, TransolverBlock
from mesh_sar.transolver.embedding import sinusoidal_embedding
from mesh_sar.utils import seed_stream

EMBEDDING_INIT_STD = 0.02


@dataclass(frozen=True)
class DenoisingSchedule:
    """Euler steps per scale, coarse to fine."""

    steps_per_scale: tuple[int, ...]

    def __post_init__(self):
        if len(self.steps_per_scale) == 0 or any(int(s) < 1 for s in self.steps_per_scale):
            raise ValidationError(f"Every scale needs >= 1 step, got {list(self.steps_per_scale)}")

    @property
    def num_scales(self) -> int:
        return len(self.steps_per_scale)

    def breakdown(self, sizes: list[int]) -> list[int]:
        """Sampler node-evaluations per scale, steps_k * |S_k|."""
        if len(sizes) != self.num_scales:
            raise ValidationError(f"Schedule has {self.num_scales} entries for {len(sizes)} scales.")
        return [int(steps) * int(size) for steps, size in zip(self.steps_per_scale, sizes)]

    def cost(self, sizes: list[int]) -> int:
        """Total sampler node-evaluations for one sample.

        Example:
            >>> DenoisingSchedule((10, 6, 1)).cost([8, 24, 72])
            296
        """
        return sum(self.breakdown(sizes))


class ConditionEncoder(Module):
    """Lift of [x, conditions, onehot] followed by plain Transolver blocks.

    With ``use_blocks=False`` Y is only the linear lift of the raw node inputs.
    """

    def __init__(self, in_features: int, config: ModelConfig, rng: np.random.Generator, use_blocks: bool = True):
        width = config.f_model
        self.lift = Linear(in_features, width, rng)
        self.blocks = []
        self.norm, self.head = None, None
        if use_blocks:
            self.blocks = [
                TransolverBlock(width, config.num_heads, config.num_slices, rng) for _ in range(config.l_cond)
            ]
            self.norm = LayerNorm(width)
            self.head = Linear(width, width, rng)

    def forward(self, inputs: Tensor) -> Tensor:
        h = self.lift(inputs)
        if self.head is None:
            return h
        for block in self.blocks:
            h = block(h)
        return self.head(self.norm(h))


class AutoregressiveModule(Module):
    """Maps Y and the values of S_1..S_{k-1} to the conditioning Z_k of the nodes of S_k."""

    def __init__(self, num_channels: int, config: ModelConfig, rng: np.random.Generator):
        width = config.f_model
        self.value_lift = Linear(num_channels, width, rng)
        self.mask_embedding = parameter(EMBEDDING_INIT_STD * rng.standard_normal(width))
        self.scale_embeddings = parameter(EMBEDDING_INIT_STD * rng.standard_normal((config.num_scales, width)))
        self.input_lift = Linear(2 * width, width, rng)
        self.blocks = [
            AdaLNZeroBlock(width, config.num_heads, config.num_slices, width, rng)
            for _ in range(config.l_ar)
        ]
        self.norm = LayerNorm(width)
        self.head = Linear(width, width, rng)

    def forward(
        self, k: int, y: Tensor, hierarchy: ScaleHierarchy, coarser_values: Optional[Tensor], batch: int = 1
    ) -> Tensor:
        """Z_k of shape (batch, |S_k|, F_model); without coarser values the single row is repeated ``batch`` times."""
        prefix, target = hierarchy.prefix(k - 1), hierarchy.partitions[k - 1]
        repeat = batch if coarser_values is None else 1
        batch = 1 if coarser_values is None else coarser_values.shape[0]
        width = self.mask_embedding.shape[0]

        y_target = F.broadcast_to(F.row_select(y, target), (batch, len(target), y.shape[-1]))
        masked = F.broadcast_to(self.mask_embedding, (batch, len(target), width))
        rows = F.concat([masked, y_target], axis=-1)
        if len(prefix):
            y_prefix = F.broadcast_to(F.row_select(y, prefix), (batch, len(prefix), y.shape[-1]))
            known = F.concat([self.value_lift(coarser_values), y_prefix], axis=-1)
            rows = F.concat([known, rows], axis=-2)

        h = self.input_lift(rows)
        embedding = F.narrow(self.scale_embeddings, k - 1, k, axis=0)
        for block in self.blocks:
            h = block(h, embedding)
        out = F.narrow(self.head(self.norm(h)), len(prefix), len(prefix) + len(target), axis=-2)
        if repeat > 1:
            out = F.broadcast_to(out, (repeat,) + out.shape[1:])
        return out


class FlowSampler(Module):
    """Velocity field u(S_{k,r}, r | X_k, Y_k, Z_k, onehot_k).

    Node input: [MLP([s, z, MLP([x, onehot]) + MLP(y)]), emb(r)], lifted to
    F_model and passed through AdaLN-Zero blocks conditioned on emb(r).
    With ``nodewise`` the blocks drop their attention sub-layer.
    """

    def __init__(self, num_channels: int, dim: int, config: ModelConfig, rng: np.random.Generator, nodewise: bool = False):
        width, self.embedding_width = config.f_model, config.f_emb
        self.geometry_mlp = MLP(dim + config.num_scales, width, width, rng)
        self.context_mlp = MLP(width, width, width, rng)
        self.input_mlp = MLP(num_channels + 2 * width, width, width, rng)
        self.lift = Linear(width + config.f_emb, width, rng)
        self.blocks = [
            AdaLNZeroBlock(width, config.num_heads, config.num_slices, config.f_emb, rng, use_attention=not nodewise)
            for _ in range(config.l_sampler)
        ]
        self.norm = LayerNorm(width)
        self.head = Linear(width, num_channels, rng)

    def lifted_inputs(self, s: Tensor, r: np.ndarray, geometry: np.ndarray, y: Tensor, z: Tensor) -> tuple[Tensor, Tensor]:
        """Block input (B, n, F_model) and the time embedding (B, F_emb)."""
        batch, nodes = s.shape[0], s.shape[1]
        embedding = sinusoidal_embedding(r, self.embedding_width)
        context = F.add(self.geometry_mlp(Tensor(geometry[None])), self.context_mlp(y))
        context = F.broadcast_to(context, (batch, nodes, context.shape[-1]))
        if z.shape[0] != batch:
            if z.shape[0] != 1:
                raise ValidationError(f"Conditioning batch {z.shape[0]} does not match {batch} noisy states.")
            z = F.broadcast_to(z, (batch, nodes, z.shape[-1]))
        h = self.input_mlp(F.concat([s, z, context], axis=-1))
        per_node = F.broadcast_to(F.reshape(embedding, (batch, 1, self.embedding_width)), (batch, nodes, self.embedding_width))
        return self.lift(F.concat([h, per_node], axis=-1)), embedding

    def forward(self, s: Tensor, r: np.ndarray, geometry: np.ndarray, y: Tensor, z: Tensor) -> Tensor:
        h, embedding = self.lifted_inputs(s, r, geometry, y, z)
        for block in self.blocks:
            h = block(h, embedding)
        return self.head(self.norm(h))


class SarModel(Module):
    """Condition encoder, autoregressive module and sampler for one value space.

    ``value_mean``/``value_std`` standardize the modelled values (physical or
    latent); generation returns de-standardized values.

    Args:
        config: Architecture section of the run config.
        num_channels: Modelled channels (F_L in latent mode, F otherwise).
        dim: Spatial dimension.
        num_conditions: Per-node condition features.
        seed: Run seed; parameters come from a dedicated stream.
    """

    def __init__(self, config: ModelConfig, num_channels: int, dim: int, num_conditions: int, seed: int):
        rng = seed_stream(seed, "sar-init")
        self.config = config
        self.num_channels, self.dim, self.num_conditions = num_channels, dim, num_conditions
        self.num_scales = config.num_scales
        self.encoder = ConditionEncoder(dim + num_conditions + config.num_scales, config, rng, config.cond_encoder)
        self.ar = AutoregressiveModule(num_channels, config, rng)
        self.sampler = FlowSampler(num_channels, dim, config, rng, nodewise=config.nodewise_sampler)
        self.value_mean = np.zeros(num_channels)
        self.value_std = np.ones(num_channels)

    def metadata(self) -> dict:
        return {
            "num_channels": self.num_channels,
            "dim": self.dim,
            "num_conditions": self.num_conditions,
            "value_mean": self.value_mean.tolist(),
            "value_std": self.value_std.tolist(),
        }

    @classmethod
    def from_metadata(cls, config: ModelConfig, metadata: dict, seed: int) -> "SarModel":
        model = cls(config, metadata["num_channels"], metadata["dim"], metadata["num_conditions"], seed)
        model.value_mean = np.asarray(metadata["value_mean"], dtype=np.float64)
        model.value_std = np.asarray(metadata["value_std"], dtype=np.float64)
        return model

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.value_mean) / self.value_std

    def destandardize(self, values: np.ndarray) -> np.ndarray:
        return values * self.value_std + self.value_mean


def condition_inputs(graph: MeshGraph, hierarchy: ScaleHierarchy) -> np.ndarray:
    """(N, d + C + K) rows [x_i, v_c_i, onehot(scale_i)]."""
    return np.concatenate([graph.positions, graph.node_conditions, scale_onehot(hierarchy)], axis=1)


def geometry_inputs(graph: MeshGraph, hierarchy: ScaleHierarchy, k: int) -> np.ndarray:
    """(|S_k|, d + K) rows [x_j, onehot(scale_j)] of the nodes of S_k."""
    nodes = hierarchy.partitions[k - 1]
    return np.concatenate([graph.positions[nodes], scale_onehot(hierarchy)[nodes]], axis=1)


def encode_conditions(model: SarModel, graph: MeshGraph, hierarchy: ScaleHierarchy) -> Tensor:
    """Y of shape (1, N, F_model); cacheable per system."""
    if hierarchy.num_scales != model.num_scales:
        raise ValidationError(f"Hierarchy has {hierarchy.num_scales} scales, model expects {model.num_scales}.")
    return model.encoder(Tensor(condition_inputs(graph, hierarchy)[None]))


def ar_step(
    model: SarModel, k: int, y: Tensor, hierarchy: ScaleHierarchy, coarser_values=None, batch: int = 1
) -> Tensor:
    """Z_k of shape (B, |S_k|, F_model).

    Args:
        model: SAR model.
        k: Scale in 1..K.
        y: Condition encoding (1, N, F_model).
        hierarchy: Scale hierarchy of the system.
        coarser_values: (B, |S_1| + ... + |S_{k-1}|, C) values ordered as
            ``hierarchy.prefix(k - 1)``; ignored for k = 1.
        batch: Rows of Z_1; for k > 1 the batch of ``coarser_values`` is used.

    Raises:
        ValidationError: k out of range or coarser values missing or mis-shaped.
    """
    if not 1 <= k <= model.num_scales:
        raise ValidationError(f"Scale {k} outside 1..{model.num_scales}")
    expected = len(hierarchy.prefix(k - 1))
    if k == 1:
        coarser_values = None
    elif coarser_values is None:
        raise ValidationError(f"Scale {k} needs the values of {expected} coarser nodes.")
    else:
        coarser_values = as_tensor(coarser_values)
        if coarser_values.ndim != 3 or coarser_values.shape[1:] != (expected, model.num_channels):
            raise ValidationError(
                f"Coarser values for scale {k} must be (B, {expected}, {model.num_channels}), "
                f"got {coarser_values.shape}"
            )
    return model.ar(k, y, hierarchy, coarser_values, batch)


def sampler_velocity(
    model: SarModel,
    s: Tensor,
    r,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    k: int,
    y: Tensor,
    z: Tensor,
) -> Tensor:
    """Velocity (B, |S_k|, C) at path points ``s`` and times ``r`` (scalar or (B,))."""
    batch = s.shape[0]
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), (batch,))
    y_k = F.row_select(y, hierarchy.partitions[k - 1])
    return model.sampler(as_tensor(s), r, geometry_inputs(graph, hierarchy, k), y_k, z)
