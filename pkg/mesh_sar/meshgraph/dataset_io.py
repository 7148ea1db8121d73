import json
import logging
import os

import numpy as np

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.meshgraph.meshgraph import (
    ChannelStats,
    Dataset,
    System,
    build_mesh_graph,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def dataset_to_dict(dataset: Dataset) -> dict:
    """JSON-ready dict; snapshots are stored channel-major as [channel][snapshot][node]."""
    return {
        "format_version": FORMAT_VERSION,
        "normalized": dataset.normalized,
        "channel_stats": dataset.channel_stats.to_dict() if dataset.channel_stats else None,
        "metadata": dataset.metadata,
        "systems": [
            {
                "space_tag": s.space_tag,
                "positions": s.graph.positions.tolist(),
                "edges": s.graph.undirected_edges().tolist(),
                "conditions": s.graph.node_conditions.tolist(),
                "snapshots": np.transpose(s.snapshots, (2, 0, 1)).tolist(),
            }
            for s in dataset.systems
        ],
    }


def dataset_from_dict(data: dict) -> Dataset:
    if data.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"Unsupported dataset format version: {data.get('format_version')}")

    systems = []
    for entry in data["systems"]:
        graph = build_mesh_graph(entry["positions"], entry["edges"], entry["conditions"])
        channel_major = np.asarray(entry["snapshots"], dtype=np.float64)
        if channel_major.ndim != 3:
            raise ValidationError(f"Snapshots must be [channel][snapshot][node], got {channel_major.shape}")
        systems.append(
            System(graph, np.transpose(channel_major, (1, 2, 0)), entry.get("space_tag", "physical"))
        )

    stats = data.get("channel_stats")
    return Dataset(
        systems,
        channel_stats=ChannelStats.from_dict(stats) if stats else None,
        normalized=bool(data.get("normalized", False)),
        metadata=data.get("metadata", {}),
    )


def save_dataset(dataset: Dataset, path: str) -> str:
    """Writes ``dataset`` as one JSON document and returns the path."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(dataset_to_dict(dataset), f)
    logger.info(f"Saved dataset with {len(dataset.systems)} system(s) to {path}")
    return path


def load_dataset(path: str) -> Dataset:
    if not os.path.exists(path):
        msg = f"Dataset file not found: {path}"
        logger.error(msg)
        raise MissingPrerequisiteError(msg)
    with open(path) as f:
        data = json.load(f)
    return dataset_from_dict(data)
