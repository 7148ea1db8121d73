"""Run-directory layout, manifests and model checkpoints shared by the command handlers."""

import json
import logging
import os
from typing import Optional

import numpy as np

from mesh_sar.config.run_config import RunConfig
from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.numcore import load_checkpoint, restore_training_arrays, save_checkpoint, training_arrays
from mesh_sar.sar.model import SarModel
from mesh_sar.utils import get_versions
from mesh_sar.vae.model import VaeModel

logger = logging.getLogger(__name__)

RUN_LAYOUT = {
    "dataset": "data/dataset.json",
    "heldout": "data/heldout.json",
    "hierarchy": "hierarchy/hierarchy_{system}.json",
    "vae": "vae/vae",
    "vae_history": "vae/history.csv",
    "latents": "latents/latents.json",
    "sar": "sar/sar",
    "sar_history": "sar/history.csv",
    "samples": "samples/samples.json",
    "metrics": "eval/metrics_{system}",
    "pdf": "eval/pdf_{system}.csv",
    "bench": "bench/bench.csv",
    "plots": "plots",
}


def artifact_path(config: RunConfig, name: str, **fields) -> str:
    """Path of artifact ``name`` inside ``config.output_dir``.

    Example:
        >>> artifact_path(config, "hierarchy", system=0)
        'runs/hierarchy/hierarchy_0.json'
    """
    return os.path.join(config.output_dir, RUN_LAYOUT[name].format(**fields))


def manifest_path(artifact: str) -> str:
    return f"{artifact}.manifest.json"


def write_manifest(
    artifact: str, config: RunConfig, command: str, extra: Optional[dict] = None
) -> str:
    """Writes ``<artifact>.manifest.json`` with everything needed to reproduce ``artifact``."""
    manifest = {
        "artifact": os.path.basename(artifact),
        "command": command,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "model_hash": config.model_hash(),
        "config": config.to_dict(),
        "versions": get_versions(),
        **(extra or {}),
    }
    path = manifest_path(artifact)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def read_manifest(artifact: str, logger: logging.Logger = logger) -> dict:
    path = manifest_path(artifact)
    if not os.path.exists(path):
        msg = f"Manifest not found: {path}"
        logger.error(msg)
        raise MissingPrerequisiteError(msg)
    with open(path) as f:
        return json.load(f)


def require(path: str, what: str, hint: str, logger: logging.Logger = logger) -> str:
    """Returns ``path`` or raises with a pointer to the command that produces it."""
    if not os.path.exists(path):
        msg = f"Missing {what} at {path}; run `{hint}` first."
        logger.error(msg)
        raise MissingPrerequisiteError(msg)
    return path


def check_model_hash(metadata: dict, config: RunConfig, what: str, logger: logging.Logger = logger) -> None:
    """Raises when a checkpoint was trained under another model section."""
    if metadata.get("model_hash") != config.model_hash():
        msg = (
            f"{what} checkpoint was trained with model hash {metadata.get('model_hash')}, "
            f"current config has {config.model_hash()}; retrain or restore the original config."
        )
        logger.error(msg)
        raise MissingPrerequisiteError(msg)


def save_model(
    prefix: str,
    model,
    config: RunConfig,
    group=None,
    metadata: Optional[dict] = None,
    logger: logging.Logger = logger,
) -> dict:
    """Checkpoint of ``model`` (and optimizer state) tagged with the config hashes."""
    extra = {
        "config_hash": config.config_hash(),
        "model_hash": config.model_hash(),
        "adam_step": group.step_count if group is not None else 0,
        **(metadata or {}),
    }
    return save_checkpoint(prefix, training_arrays(model, group), extra, logger)


def unreadable_checkpoint(
    prefix: str, what: str, hint: str, error: Exception, logger: logging.Logger = logger
) -> MissingPrerequisiteError:
    msg = f"{what} checkpoint {prefix} cannot be restored ({error}); rerun `{hint}`."
    logger.error(msg)
    return MissingPrerequisiteError(msg)


def load_vae(prefix: str, config: RunConfig, logger: logging.Logger = logger) -> tuple[VaeModel, dict]:
    """VAE restored from ``prefix`` together with its checkpoint arrays and metadata.

    Raises:
        MissingPrerequisiteError: checkpoint missing, unreadable, incomplete or
            trained under another model hash.
    """
    try:
        arrays, metadata = load_checkpoint(prefix)
    except (ValidationError, ValueError, KeyError) as e:
        raise unreadable_checkpoint(prefix, "VAE", "train-vae", e, logger) from e
    check_model_hash(metadata, config, "VAE", logger)
    try:
        model = VaeModel(
            num_channels=metadata["num_channels"],
            dim=metadata["dim"],
            width=config.model.f_vae,
            latent_width=config.model.f_latent,
            rng=np.random.default_rng(0),
        )
        restore_training_arrays(model, arrays)
    except (KeyError, ValueError) as e:
        raise unreadable_checkpoint(prefix, "VAE", "train-vae", e, logger) from e
    return model, {"arrays": arrays, "metadata": metadata}


def load_sar(prefix: str, config: RunConfig, logger: logging.Logger = logger) -> tuple[SarModel, dict]:
    """SAR model restored from ``prefix`` together with its checkpoint arrays and metadata."""
    try:
        arrays, metadata = load_checkpoint(prefix)
    except (ValidationError, ValueError, KeyError) as e:
        raise unreadable_checkpoint(prefix, "SAR", "train-sar", e, logger) from e
    check_model_hash(metadata, config, "SAR", logger)
    try:
        model = SarModel.from_metadata(config.model, metadata, config.seed)
        restore_training_arrays(model, arrays)
    except (KeyError, ValueError) as e:
        raise unreadable_checkpoint(prefix, "SAR", "train-sar", e, logger) from e
    return model, {"arrays": arrays, "metadata": metadata}
