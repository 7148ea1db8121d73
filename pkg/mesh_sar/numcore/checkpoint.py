"""Parameter checkpoints: a flat little-endian float64 blob plus a JSON manifest.

``<prefix>.bin`` holds every array back to back; ``<prefix>.json`` lists the
name, shape and offset of each array together with free-form metadata
(config hash, optimizer step, schedule history, VAE reference, ...).
"""

import json
import logging
import os
from typing import Optional

import numpy as np

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mesh_sar.checkpoint/1"


def save_checkpoint(
    prefix: str,
    arrays: dict[str, np.ndarray],
    metadata: Optional[dict] = None,
    logger: logging.Logger = logger,
) -> dict:
    """Writes ``arrays`` and ``metadata`` under ``prefix``.

    Args:
        prefix: Path without extension; ``.bin`` and ``.json`` are appended.
        arrays: Named arrays, stored in insertion order.
        metadata: JSON-serializable extras.
        logger: Logger for progress messages.

    Returns:
        dict: {"blob": path, "manifest": path}
    """
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    entries, offset = [], 0
    with open(prefix + ".bin", "wb") as f:
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            f.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "offset": offset, "size": data.size})
            offset += data.size

    manifest = {"format": CHECKPOINT_FORMAT, "arrays": entries, "metadata": metadata or {}}
    with open(prefix + ".json", "w") as f:
        json.dump(manifest, f, indent=1)
    logger.info(f"Saved checkpoint {prefix} ({len(entries)} arrays, {offset} values)")
    return {"blob": prefix + ".bin", "manifest": prefix + ".json"}


def load_checkpoint(prefix: str) -> tuple[dict[str, np.ndarray], dict]:
    """Reads a checkpoint written by :func:`save_checkpoint`.

    Returns:
        tuple: (arrays by name, metadata)

    Raises:
        MissingPrerequisiteError: blob or manifest missing.
        ValidationError: unknown format or truncated blob.
    """
    for path in (prefix + ".bin", prefix + ".json"):
        if not os.path.exists(path):
            msg = f"Checkpoint file not found: {path}"
            logger.error(msg)
            raise MissingPrerequisiteError(msg)

    with open(prefix + ".json") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"Unknown checkpoint format: {manifest.get('format')}")

    blob = np.fromfile(prefix + ".bin", dtype="<f8")
    arrays = {}
    for entry in manifest["arrays"]:
        start, size = entry["offset"], entry["size"]
        if start + size > blob.size:
            raise ValidationError(f"Checkpoint blob {prefix}.bin is truncated at {entry['name']}")
        arrays[entry["name"]] = blob[start : start + size].reshape(entry["shape"]).astype(np.float64)
    return arrays, manifest["metadata"]


def training_arrays(model, group=None) -> dict[str, np.ndarray]:
    """Parameters under ``param/<name>`` plus, when given, the optimizer moments."""
    arrays = {f"param/{name}": p.data for name, p in model.parameters().items()}
    if group is not None:
        arrays.update(group.state_arrays())
    return arrays


def restore_training_arrays(model, arrays: dict[str, np.ndarray], group=None, step_count: int = 0) -> None:
    """Inverse of :func:`training_arrays`."""
    model.load_arrays({name[len("param/"):]: a for name, a in arrays.items() if name.startswith("param/")})
    if group is not None:
        group.load_state_arrays(arrays, step_count)
