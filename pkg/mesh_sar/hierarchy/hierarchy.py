"""Scale assignment by iterated Guillard coarsening.

Round k keeps a greedy independent set of the level graph (nodes visited in
ascending index order) and drops the rest; dropped nodes get label k and the
survivors of the last round get label K. Labels are re-indexed to
``scale = K + 1 - label`` so that scale 1 is the smallest, coarsest set.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.meshgraph.meshgraph import MeshGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaleHierarchy:
    """Per-node scales and the coarsening levels that produced them.

    Attributes:
        scales: (N,) labels in 1..K, 1 being the coarsest scale.
        partitions: K sorted node-index arrays, partitions[k - 1] = S_k.
        level_nodes: original node indices of each level graph G^1..G^K.
        level_edges: (E_l, 2) directed edges of each level graph, in level-local indices.
    """

    scales: np.ndarray
    partitions: list[np.ndarray]
    level_nodes: list[np.ndarray]
    level_edges: list[np.ndarray]

    @property
    def num_scales(self) -> int:
        return len(self.partitions)

    @property
    def num_nodes(self) -> int:
        return int(self.scales.shape[0])

    def sizes(self) -> list[int]:
        return [len(p) for p in self.partitions]

    def prefix(self, k: int) -> np.ndarray:
        """Node indices of S_1..S_k, coarser scales first."""
        if k <= 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self.partitions[:k])

    def to_dict(self) -> dict:
        return {
            "scales": self.scales.tolist(),
            "sizes": self.sizes(),
            "level_nodes": [n.tolist() for n in self.level_nodes],
            "level_edges": [e.tolist() for e in self.level_edges],
        }


def _adjacency(edges: np.ndarray, num_nodes: int) -> sp.csr_matrix:
    """Row j lists the incoming neighbours i of node j."""
    data = np.ones(len(edges), dtype=np.int64)
    return sp.csr_matrix((data, (edges[:, 1], edges[:, 0])), shape=(num_nodes, num_nodes))


def guillard_mask(level_edges: np.ndarray, num_level_nodes: int) -> np.ndarray:
    """Greedy coarsening mask of one level graph.

    Nodes are visited in ascending index order; a node that is still unmasked
    is kept and its incoming neighbours are dropped.

    Args:
        level_edges: (E, 2) bidirectional edges over ``range(num_level_nodes)``.
        num_level_nodes: Node count of the level graph.

    Returns:
        np.ndarray: boolean mask, True for kept nodes.

    Example:
        >>> guillard_mask(np.array([[0, 1], [1, 0], [1, 2], [2, 1], [2, 3], [3, 2]]), 4)
        array([ True, False,  True, False])
    """
    if num_level_nodes < 1:
        raise ValidationError("Cannot coarsen an empty node set.")
    incoming = _adjacency(np.asarray(level_edges, dtype=np.int64).reshape(-1, 2), num_level_nodes)
    mask = np.ones(num_level_nodes, dtype=bool)
    for i in range(num_level_nodes):
        if mask[i]:
            neighbours = incoming.indices[incoming.indptr[i] : incoming.indptr[i + 1]]
            mask[neighbours[neighbours != i]] = False
    return mask


def coarsen_edges(level_edges: np.ndarray, kept_mask: np.ndarray) -> np.ndarray:
    """Connects kept nodes lying within two hops of each other.

    Args:
        level_edges: (E, 2) edges of the current level graph.
        kept_mask: Output of ``guillard_mask``.

    Returns:
        np.ndarray: (E', 2) bidirectional edges of the next level, indexed by the
        rank of each kept node among the kept nodes.
    """
    num_nodes = len(kept_mask)
    adjacency = _adjacency(np.asarray(level_edges, dtype=np.int64).reshape(-1, 2), num_nodes)
    adjacency = ((adjacency + adjacency.T) > 0).astype(np.int64)
    reach = adjacency + adjacency @ adjacency
    kept = np.flatnonzero(kept_mask)
    reach = sp.coo_matrix(reach[kept][:, kept])
    off_diagonal = (reach.row != reach.col) & (reach.data > 0)
    edges = np.stack([reach.col[off_diagonal], reach.row[off_diagonal]], axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order].astype(np.int64)


def build_hierarchy(
    graph: MeshGraph, num_scales: int, logger: logging.Logger = logger, allow_ties: bool = False
) -> ScaleHierarchy:
    """Assigns every node one of ``num_scales`` scales.

    Scale sizes must satisfy |S_1| < |S_2| < ... < |S_K|. On very small graphs
    the greedy rounds can keep as many nodes as they drop (a path of 4 nodes
    splits 2 + 2); ``allow_ties`` accepts such equal neighbours. A coarser scale
    larger than the next finer one is always rejected.

    Args:
        graph: Mesh graph, ideally connected.
        num_scales: K >= 1.
        logger: Logger for progress messages.
        allow_ties: Accept |S_k| == |S_{k+1}|.

    Returns:
        ScaleHierarchy: partitions S_1..S_K with S_1 the last round's survivors.

    Raises:
        ValidationError: K < 1, a scale ends up empty, or the sizes are out of order.
    """
    if num_scales < 1:
        raise ValidationError(f"Number of scales must be >= 1, got {num_scales}")

    labels = np.full(graph.num_nodes, num_scales, dtype=np.int64)
    level_nodes = [np.arange(graph.num_nodes)]
    level_edges = [graph.edges.copy()]

    for k in range(1, num_scales):
        nodes, edges = level_nodes[-1], level_edges[-1]
        kept = guillard_mask(edges, len(nodes))
        labels[nodes[~kept]] = k
        level_nodes.append(nodes[kept])
        level_edges.append(coarsen_edges(edges, kept))
        logger.info(
            f"Coarsening round {k}: kept {int(kept.sum())} of {len(nodes)} nodes, "
            f"{len(level_edges[-1])} edges at the next level"
        )

    scales = num_scales + 1 - labels
    partitions = [np.flatnonzero(scales == k) for k in range(1, num_scales + 1)]
    sizes = [len(p) for p in partitions]
    if any(size == 0 for size in sizes):
        msg = f"Mesh with {graph.num_nodes} nodes is too small for {num_scales} scales (sizes {sizes})."
        logger.error(msg)
        raise ValidationError(msg)
    if any(a > b or (a == b and not allow_ties) for a, b in zip(sizes, sizes[1:])):
        msg = (
            f"Scale sizes {sizes} of a {graph.num_nodes}-node mesh are not increasing from coarse to fine; "
            f"use fewer scales or a finer mesh."
        )
        logger.error(msg)
        raise ValidationError(msg)

    return ScaleHierarchy(
        scales=scales, partitions=partitions, level_nodes=level_nodes, level_edges=level_edges
    )


def scale_onehot(hierarchy: ScaleHierarchy) -> np.ndarray:
    """(N, K) one-hot rows with the 1 at column scale - 1."""
    onehot = np.zeros((hierarchy.num_nodes, hierarchy.num_scales))
    onehot[np.arange(hierarchy.num_nodes), hierarchy.scales - 1] = 1.0
    return onehot


def save_hierarchy(hierarchy: ScaleHierarchy, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(hierarchy.to_dict(), f)
    return path


def load_hierarchy(path: str) -> ScaleHierarchy:
    """Reads a hierarchy written by :func:`save_hierarchy`."""
    if not os.path.exists(path):
        msg = f"Hierarchy file not found: {path}"
        logger.error(msg)
        raise MissingPrerequisiteError(msg)
    with open(path) as f:
        data = json.load(f)
    scales = np.asarray(data["scales"], dtype=np.int64)
    num_scales = len(data["sizes"])
    return ScaleHierarchy(
        scales=scales,
        partitions=[np.flatnonzero(scales == k) for k in range(1, num_scales + 1)],
        level_nodes=[np.asarray(n, dtype=np.int64) for n in data["level_nodes"]],
        level_edges=[np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in data["level_edges"]],
    )
