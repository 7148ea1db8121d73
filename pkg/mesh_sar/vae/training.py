import logging
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from mesh_sar.api.utils import show_progress
from mesh_sar.config.run_config import RunConfig
from mesh_sar.exceptions import MissingPrerequisiteError, NumericalError, ValidationError
from mesh_sar.meshgraph.meshgraph import Dataset, MeshGraph, System
from mesh_sar.numcore import functional as F
from mesh_sar.numcore import (
    ParamGroup,
    PlateauSchedule,
    Tensor,
    adam_step,
    no_grad,
    plateau_update,
    restore_training_arrays,
)
from mesh_sar.utils import seed_stream
from mesh_sar.vae.model import VaeModel, reparameterize, vae_loss

logger = logging.getLogger(__name__)

ENCODE_CHUNK = 32
HISTORY_COLUMNS = ["epoch", "step", "loss", "lr"]


def union_graph(graphs: Sequence[MeshGraph]) -> MeshGraph:
    """Disjoint union of ``graphs`` with node indices shifted block by block."""
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    return MeshGraph(
        positions=np.concatenate([g.positions for g in graphs]),
        edges=np.concatenate([g.edges + offset for g, offset in zip(graphs, offsets)]),
        node_conditions=np.concatenate([g.node_conditions for g in graphs]),
        edge_displacements=np.concatenate([g.edge_displacements for g in graphs]),
    )


def build_vae(dataset: Dataset, config: RunConfig) -> VaeModel:
    return VaeModel(
        num_channels=dataset.num_channels,
        dim=dataset.systems[0].graph.dim,
        width=config.model.f_vae,
        latent_width=config.model.f_latent,
        rng=seed_stream(config.seed, "vae-init"),
    )


def epoch_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled (system, snapshot) index pairs cut into batches."""
    pairs = np.array(
        [(m, t) for m, system in enumerate(dataset.systems) for t in range(system.num_snapshots)]
    )
    pairs = pairs[rng.permutation(len(pairs))]
    return [pairs[i : i + batch_size] for i in range(0, len(pairs), batch_size)]


def batch_loss(
    model: VaeModel, dataset: Dataset, batch: np.ndarray, config: RunConfig, rng: np.random.Generator
) -> Tensor:
    """VAE loss of one batch, evaluated on the disjoint union of the batch's graphs."""
    graph = union_graph([dataset.systems[m].graph for m, _ in batch])
    values = np.concatenate([dataset.systems[m].snapshots[t] for m, t in batch])[None]
    x = Tensor(values)
    mu, log_sigma = model.encode(graph, x)
    z = reparameterize(mu, log_sigma, rng)
    z = F.add(z, F.gaussian_noise(z.shape, config.vae.latent_noise, rng))
    return vae_loss(x, model.decode(graph, z), mu, log_sigma, config.vae.kl_weight)


def train_vae(
    dataset: Dataset,
    config: RunConfig,
    logger: logging.Logger = logger,
    resume: Optional[dict] = None,
) -> dict:
    """Trains a VAE on ``dataset`` with Adam and the plateau schedule.

    Every epoch visits each snapshot once in shuffled batches. The learning rate
    is replayed from the epoch losses and training stops when it falls below
    ``config.vae.floor_lr`` or after ``config.vae.max_epochs`` epochs.

    Args:
        dataset: Normalized physical dataset.
        config: Run configuration (``model`` and ``vae`` sections are used).
        logger: Logger for progress messages.
        resume: Optional {"arrays", "metadata"} from a previous training checkpoint.

    Returns:
        dict: {"model", "group", "history" (DataFrame with epoch, step, loss, lr), "stopped"}

    Raises:
        ValidationError: dataset is not in physical space.
        NumericalError: the loss became NaN or Inf.
    """
    if dataset.space_tag != "physical":
        msg = "train_vae expects a physical-space dataset."
        logger.error(msg)
        raise ValidationError(msg)
    if not dataset.normalized:
        logger.warning("Training the VAE on a dataset that was not normalized.")

    vae_config = config.vae
    model = build_vae(dataset, config)
    group = ParamGroup(model.parameters())
    schedule = PlateauSchedule(
        initial_lr=vae_config.learning_rate,
        patience_epochs=vae_config.patience_epochs,
        floor_lr=vae_config.floor_lr,
    )
    rows: list[dict] = []
    if resume is not None:
        metadata = resume["metadata"]
        try:
            restore_training_arrays(model, resume["arrays"], group, metadata["adam_step"])
        except KeyError as e:
            msg = f"Checkpoint has no optimizer state to resume from: {e}"
            logger.error(msg)
            raise MissingPrerequisiteError(msg) from e
        rows = list(metadata.get("history", []))
        logger.info(f"Resuming VAE training after epoch {len(rows)}")

    lr = plateau_update(schedule, [r["loss"] for r in rows]) if rows else schedule.initial_lr
    stopped = schedule.should_stop(lr)
    logger.info(f"Training VAE with {model.num_parameters()} parameters, lr={lr:g}")

    for epoch in range(len(rows), vae_config.max_epochs):
        if stopped:
            break
        batches = epoch_batches(dataset, vae_config.batch_size, seed_stream(config.seed, "vae-shuffle", epoch))
        rng = seed_stream(config.seed, "vae-noise", epoch)
        losses = []
        for i, batch in enumerate(batches):
            show_progress(i + 1, len(batches), "VAE", f"Epoch {epoch + 1} batch {i + 1}/{len(batches)}")
            group.zero_grad()
            loss = batch_loss(model, dataset, batch, config, rng)
            if not np.isfinite(loss.item()):
                msg = f"VAE loss became {loss.item()} at epoch {epoch + 1}, batch {i + 1} (lr={lr:g})"
                logger.error(msg)
                raise NumericalError(msg)
            loss.backward()
            adam_step(group, lr)
            losses.append(loss.item())

        rows.append({"epoch": epoch + 1, "step": group.step_count, "loss": float(np.mean(losses)), "lr": lr})
        logger.info(f"VAE epoch {epoch + 1}: loss={rows[-1]['loss']:.6g} lr={lr:g}")
        lr = plateau_update(schedule, [r["loss"] for r in rows])
        stopped = schedule.should_stop(lr)
        if stopped:
            logger.info(f"Learning rate {lr:g} fell below {schedule.floor_lr:g}; stopping.")

    return {
        "model": model,
        "group": group,
        "history": pd.DataFrame(rows, columns=HISTORY_COLUMNS),
        "stopped": stopped,
    }


def encode_system(model: VaeModel, system: System, deterministic: bool = True, rng=None) -> np.ndarray:
    """(T, N, F_L) latents of all snapshots of ``system``."""
    chunks = []
    with no_grad():
        for start in range(0, system.num_snapshots, ENCODE_CHUNK):
            mu, log_sigma = model.encode(system.graph, system.snapshots[start : start + ENCODE_CHUNK])
            chunks.append(reparameterize(mu, log_sigma, rng, deterministic).data)
    return np.concatenate(chunks)


def encode_dataset(
    model: VaeModel, dataset: Dataset, deterministic: bool = True, seed: int = 0
) -> Dataset:
    """Latent-space copy of ``dataset`` (means by default, samples when not deterministic)."""
    systems = []
    for m, system in enumerate(dataset.systems):
        rng = seed_stream(seed, "encode-latents", m)
        latents = encode_system(model, system, deterministic, rng)
        systems.append(System(system.graph, latents, "latent"))
    metadata = dict(dataset.metadata, encoded_from=dataset.metadata.get("generator"), deterministic=deterministic)
    return replace(dataset, systems=systems, metadata=metadata)


def decode_values(model: VaeModel, graph: MeshGraph, latents: np.ndarray) -> np.ndarray:
    """(B, N, F) physical values decoded from (B, N, F_L) latents."""
    chunks = []
    with no_grad():
        for start in range(0, latents.shape[0], ENCODE_CHUNK):
            chunks.append(model.decode(graph, latents[start : start + ENCODE_CHUNK]).data)
    return np.concatenate(chunks)


def reconstruction_r2(model: VaeModel, dataset: Dataset) -> float:
    """Coefficient of determination of decode(mean latent) against the data, pooled over all values."""
    residual, total = 0.0, 0.0
    for system in dataset.systems:
        latents = encode_system(model, system)
        rec = decode_values(model, system.graph, latents)
        residual += float(np.sum((rec - system.snapshots) ** 2))
        total += float(np.sum((system.snapshots - system.snapshots.mean()) ** 2))
    if total == 0:
        raise ValidationError("Reconstruction R2 is undefined for constant data.")
    return 1.0 - residual / total
