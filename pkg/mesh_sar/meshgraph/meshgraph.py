import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from mesh_sar.exceptions import ValidationError

logger = logging.getLogger(__name__)

SpaceTag = Literal["physical", "latent"]


@dataclass(frozen=True)
class MeshGraph:
    """Mesh nodes with bidirectional edges.

    Attributes:
        positions: (N, d) node coordinates.
        edges: (E, 2) directed edges (i, j); (j, i) is present for every (i, j).
        node_conditions: (N, C) per-node condition features.
        edge_displacements: (E, d) rows x_j - x_i for each edge (i, j).
    """

    positions: np.ndarray
    edges: np.ndarray
    node_conditions: np.ndarray
    edge_displacements: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def dim(self) -> int:
        return int(self.positions.shape[1])

    def undirected_edges(self) -> np.ndarray:
        """Every other row of ``edges``, i.e. the list the graph was built from."""
        return self.edges[0::2].copy()


@dataclass(frozen=True)
class FieldState:
    """Per-node field values in physical or VAE-latent space."""

    values: np.ndarray
    space_tag: SpaceTag = "physical"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValidationError(
                f"Field values must be (num_nodes, channels), got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("Field values contain NaN or Inf entries.")

    @property
    def num_channels(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise ValidationError(
                f"Channel standard deviations must be positive, got {self.std.tolist()}"
            )

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            std=np.asarray(data["std"], dtype=np.float64),
        )


@dataclass(frozen=True)
class System:
    """One graph and its snapshots, stored as a (T, N, F) array."""

    graph: MeshGraph
    snapshots: np.ndarray
    space_tag: SpaceTag = "physical"

    def __post_init__(self):
        if self.snapshots.ndim != 3 or self.snapshots.shape[1] != self.graph.num_nodes:
            raise ValidationError(
                f"Snapshots of shape {self.snapshots.shape} do not match a graph "
                f"with {self.graph.num_nodes} nodes."
            )

    @property
    def num_snapshots(self) -> int:
        return int(self.snapshots.shape[0])

    def snapshot(self, index: int) -> FieldState:
        return FieldState(self.snapshots[index], self.space_tag)


@dataclass(frozen=True)
class Dataset:
    systems: list[System]
    channel_stats: Optional[ChannelStats] = None
    normalized: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.systems:
            raise ValidationError("A dataset needs at least one system.")
        channels = {s.snapshots.shape[2] for s in self.systems}
        if len(channels) != 1:
            raise ValidationError(f"Systems disagree on channel count: {sorted(channels)}")

    @property
    def num_channels(self) -> int:
        return int(self.systems[0].snapshots.shape[2])

    @property
    def space_tag(self) -> SpaceTag:
        return self.systems[0].space_tag


def build_mesh_graph(
    positions: Sequence[Sequence[float]],
    undirected_edge_list: Sequence[Sequence[int]],
    node_conditions: Optional[Sequence[Sequence[float]]] = None,
) -> MeshGraph:
    """Builds a MeshGraph with both directions of every mesh edge.

    Args:
        positions: (N, d) node coordinates.
        undirected_edge_list: pairs {i, j}; each pair must appear once.
        node_conditions: (N, C) condition features, defaults to zero columns.

    Returns:
        MeshGraph: edges ordered [(i, j), (j, i), ...] following the input list.

    Raises:
        ValidationError: index out of range, self-loop or duplicate edge.

    Example:
        >>> g = build_mesh_graph([[0, 0], [1, 0]], [[0, 1]])
        >>> g.edges.tolist(), g.edge_displacements.tolist()
        ([[0, 1], [1, 0]], [[1.0, 0.0], [-1.0, 0.0]])
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] == 0:
        raise ValidationError(f"Positions must be a non-empty (N, d) array, got {pos.shape}")
    num_nodes = pos.shape[0]

    pairs = np.asarray(undirected_edge_list, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise ValidationError(f"Edge index out of range [0, {num_nodes}).")
    loops = pairs[:, 0] == pairs[:, 1]
    if np.any(loops):
        raise ValidationError(f"Self-loop at node {int(pairs[loops][0, 0])}.")
    canonical = np.sort(pairs, axis=1)
    if len(np.unique(canonical, axis=0)) != len(canonical):
        raise ValidationError("Duplicate undirected edge in edge list.")

    edges = np.empty((2 * len(pairs), 2), dtype=np.int64)
    edges[0::2] = pairs
    edges[1::2] = pairs[:, ::-1]

    if node_conditions is None:
        conditions = np.zeros((num_nodes, 0), dtype=np.float64)
    else:
        conditions = np.asarray(node_conditions, dtype=np.float64).reshape(num_nodes, -1)

    return MeshGraph(
        positions=pos,
        edges=edges,
        node_conditions=conditions,
        edge_displacements=pos[edges[:, 1]] - pos[edges[:, 0]],
    )


def compute_channel_stats(dataset: Dataset) -> ChannelStats:
    values = np.concatenate(
        [s.snapshots.reshape(-1, dataset.num_channels) for s in dataset.systems]
    )
    std = values.std(axis=0)
    if np.any(std == 0):
        zero = np.flatnonzero(std == 0).tolist()
        msg = f"Zero-variance channel(s) {zero}; cannot normalize."
        logger.error(msg)
        raise ValidationError(msg)
    return ChannelStats(mean=values.mean(axis=0), std=std)


def normalize(dataset: Dataset, channel_stats: Optional[ChannelStats] = None) -> Dataset:
    """Standardizes every channel over all systems and snapshots.

    Args:
        dataset: Raw dataset.
        channel_stats: Stats to apply; computed from ``dataset`` when omitted.

    Returns:
        Dataset: normalized copy carrying the stats used.

    Raises:
        ValidationError: a channel is constant.
    """
    stats = channel_stats or compute_channel_stats(dataset)
    systems = [
        replace(s, snapshots=(s.snapshots - stats.mean) / stats.std) for s in dataset.systems
    ]
    return replace(dataset, systems=systems, channel_stats=stats, normalized=True)


def denormalize(field_state: FieldState, channel_stats: ChannelStats) -> FieldState:
    return FieldState(
        field_state.values * channel_stats.std + channel_stats.mean, field_state.space_tag
    )


def split_snapshots(
    dataset: Dataset, holdout_fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """Splits every system's snapshots into disjoint train and held-out sets."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValidationError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    train, held = [], []
    for s in dataset.systems:
        order = rng.permutation(s.num_snapshots)
        n_held = max(1, int(round(holdout_fraction * s.num_snapshots)))
        if n_held >= s.num_snapshots:
            raise ValidationError(
                f"System with {s.num_snapshots} snapshots cannot be split at {holdout_fraction}."
            )
        held.append(replace(s, snapshots=s.snapshots[np.sort(order[:n_held])]))
        train.append(replace(s, snapshots=s.snapshots[np.sort(order[n_held:])]))
    return replace(dataset, systems=train), replace(dataset, systems=held)
