import logging
from collections import defaultdict
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from mesh_sar.api.utils import show_progress
from mesh_sar.config.run_config import RunConfig
from mesh_sar.exceptions import MissingPrerequisiteError, NumericalError, ValidationError
from mesh_sar.hierarchy.hierarchy import ScaleHierarchy
from mesh_sar.meshgraph.meshgraph import Dataset, MeshGraph
from mesh_sar.numcore import functional as F
from mesh_sar.numcore import (
    ParamGroup,
    PlateauSchedule,
    Tensor,
    adam_step,
    plateau_update,
    restore_training_arrays,
)
from mesh_sar.sar.model import SarModel, ar_step, encode_conditions, sampler_velocity
from mesh_sar.utils import seed_stream

logger = logging.getLogger(__name__)

COARSE_NOISE = 0.01
R_DRAWS = 4
HISTORY_COLUMNS = ["epoch", "step", "loss", "lr"]


def probability_path(s1: np.ndarray, eps: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Point s_r = (1 - r) eps + r s1 on the linear path and its velocity target s1 - eps.

    ``r`` has one entry per batch row.
    """
    r = np.asarray(r, dtype=np.float64).reshape((-1,) + (1,) * (s1.ndim - 1))
    return (1.0 - r) * eps + r * s1, s1 - eps


def velocity_loss(u: Tensor, w: np.ndarray) -> Tensor:
    """Mean over rows, nodes and channels of (u - w)^2."""
    return F.mean(F.square(F.sub(u, w)))


def fm_loss(
    model: SarModel,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    target_values: np.ndarray,
    k: int,
    rng: Union[np.random.Generator, int],
    coarse_noise: float = COARSE_NOISE,
    r_draws: int = R_DRAWS,
    y: Optional[Tensor] = None,
) -> Tensor:
    """Flow-matching loss of scale ``k`` for a batch of standardized states.

    The encoder and AR module run once; their output is shared by ``r_draws``
    sampler evaluations, each with its own r ~ U[0, 1) and noise draw. Values of
    coarser scales are perturbed by N(0, coarse_noise^2) before entering the AR
    module. Nodes of scales finer than ``k`` are never read.

    Args:
        model: SAR model.
        graph: Mesh graph of the system.
        hierarchy: Scale hierarchy of the system.
        target_values: (N, C) or (B, N, C) standardized values on all nodes.
        k: Scale in 1..K.
        rng: Generator or seed for r, the path noise and the coarse-input noise.
        coarse_noise: Std of the noise added to coarser-scale inputs.
        r_draws: Denoising times drawn per state.
        y: Condition encoding; computed when omitted.

    Returns:
        Tensor: scalar loss.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    values = np.asarray(target_values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    batch = values.shape[0]

    if y is None:
        y = encode_conditions(model, graph, hierarchy)
    coarser = None
    if k > 1:
        coarser = values[:, hierarchy.prefix(k - 1)]
        coarser = coarser + coarse_noise * rng.standard_normal(coarser.shape)
    z = ar_step(model, k, y, hierarchy, coarser, batch=batch)

    s1 = np.tile(values[:, hierarchy.partitions[k - 1]], (r_draws, 1, 1))
    r = rng.uniform(0.0, 1.0, r_draws * batch)
    eps = rng.standard_normal(s1.shape)
    s_r, w = probability_path(s1, eps, r)
    z = F.concat([z] * r_draws, axis=0) if r_draws > 1 else z
    u = sampler_velocity(model, Tensor(s_r), r, graph, hierarchy, k, y, z)
    return velocity_loss(u, w)


def draw_training_items(
    rng: np.random.Generator, snapshot_counts: Sequence[int], num_scales: int, count: int
) -> np.ndarray:
    """(count, 3) rows (system, snapshot, k): snapshots uniform over the pooled dataset, k uniform in 1..K."""
    offsets = np.cumsum([0] + list(snapshot_counts))
    flat = rng.integers(0, offsets[-1], count)
    systems = np.searchsorted(offsets, flat, side="right") - 1
    scales = rng.integers(1, num_scales + 1, count)
    return np.stack([systems, flat - offsets[systems], scales], axis=1)


def value_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over every node of every snapshot; zero std becomes 1."""
    pooled = np.concatenate([s.snapshots.reshape(-1, s.snapshots.shape[-1]) for s in dataset.systems])
    mean, std = pooled.mean(axis=0), pooled.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def step_loss(
    model: SarModel,
    dataset: Dataset,
    hierarchies: Sequence[ScaleHierarchy],
    items: np.ndarray,
    config: RunConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Batch-mean fm_loss, evaluated once per (system, scale) group of ``items``."""
    groups = defaultdict(list)
    for m, t, k in items:
        groups[(int(m), int(k))].append(int(t))

    total = None
    for (m, k), snapshots in sorted(groups.items()):
        system = dataset.systems[m]
        values = model.standardize(system.snapshots[snapshots])
        loss = fm_loss(
            model,
            system.graph,
            hierarchies[m],
            values,
            k,
            rng,
            coarse_noise=config.sar.coarse_noise,
            r_draws=config.sar.r_draws,
        )
        weighted = F.mul(loss, len(snapshots) / len(items))
        total = weighted if total is None else F.add(total, weighted)
    return total


def train_sar(
    model: SarModel,
    dataset: Dataset,
    hierarchies: Sequence[ScaleHierarchy],
    config: RunConfig,
    logger: logging.Logger = logger,
    resume: Optional[dict] = None,
) -> dict:
    """Trains the SAR model jointly over all scales.

    Each step draws ``config.sar.batch_size`` (system, snapshot, k) triples and
    takes one Adam step on their mean flow-matching loss. An epoch is
    ``config.sar.steps_per_epoch`` steps; the plateau schedule starts at
    ``config.sar.learning_rate``.

    Args:
        model: Freshly built (or checkpoint-restored) SAR model.
        dataset: Latent dataset in latent mode, normalized physical dataset otherwise.
        hierarchies: One hierarchy per system.
        config: Run configuration.
        logger: Logger for progress messages.
        resume: Optional {"arrays", "metadata"} from a previous training checkpoint.

    Returns:
        dict: {"model", "group", "history" (DataFrame with epoch, step, loss, lr), "stopped"}

    Raises:
        ValidationError: dataset space or hierarchies do not match the model.
        NumericalError: the loss became NaN or Inf.
    """
    expected_space = "latent" if model.config.latent_mode else "physical"
    if dataset.space_tag != expected_space:
        msg = f"SAR model in {expected_space} mode cannot train on a {dataset.space_tag} dataset."
        logger.error(msg)
        raise ValidationError(msg)
    if dataset.num_channels != model.num_channels:
        msg = f"Dataset has {dataset.num_channels} channels, model expects {model.num_channels}."
        logger.error(msg)
        raise ValidationError(msg)
    if len(hierarchies) != len(dataset.systems):
        msg = f"Got {len(hierarchies)} hierarchies for {len(dataset.systems)} systems."
        logger.error(msg)
        raise ValidationError(msg)

    sar_config = config.sar
    group = ParamGroup(model.parameters())
    schedule = PlateauSchedule(
        initial_lr=sar_config.learning_rate,
        patience_epochs=sar_config.patience_epochs,
        floor_lr=sar_config.floor_lr,
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
        logger.info(f"Resuming SAR training after epoch {len(rows)}")
    else:
        model.value_mean, model.value_std = value_stats(dataset)

    lr = plateau_update(schedule, [r["loss"] for r in rows]) if rows else schedule.initial_lr
    stopped = schedule.should_stop(lr)
    counts = [s.num_snapshots for s in dataset.systems]
    logger.info(
        f"Training SAR ({expected_space} space, K={model.num_scales}) with "
        f"{model.num_parameters()} parameters, lr={lr:g}"
    )

    for epoch in range(len(rows), sar_config.max_epochs):
        if stopped:
            break
        losses = []
        for i in range(sar_config.steps_per_epoch):
            show_progress(i + 1, sar_config.steps_per_epoch, "SAR", f"Epoch {epoch + 1} step {i + 1}")
            step = epoch * sar_config.steps_per_epoch + i
            items = draw_training_items(
                seed_stream(config.seed, "sar-items", step), counts, model.num_scales, sar_config.batch_size
            )
            group.zero_grad()
            loss = step_loss(model, dataset, hierarchies, items, config, seed_stream(config.seed, "sar-noise", step))
            if not np.isfinite(loss.item()):
                msg = f"SAR loss became {loss.item()} at epoch {epoch + 1}, step {i + 1} (lr={lr:g})"
                logger.error(msg)
                raise NumericalError(msg)
            loss.backward()
            adam_step(group, lr)
            losses.append(loss.item())

        rows.append({"epoch": epoch + 1, "step": group.step_count, "loss": float(np.mean(losses)), "lr": lr})
        logger.info(f"SAR epoch {epoch + 1}: loss={rows[-1]['loss']:.6g} lr={lr:g}")
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
