"""Coarse-to-fine generation: AR conditioning and Euler integration per scale."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from mesh_sar.api.utils import show_progress
from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.hierarchy.hierarchy import ScaleHierarchy
from mesh_sar.meshgraph.meshgraph import FieldState, MeshGraph
from mesh_sar.numcore import Tensor, no_grad
from mesh_sar.sar.model import DenoisingSchedule, SarModel, ar_step, encode_conditions, sampler_velocity
from mesh_sar.utils import seed_stream
from mesh_sar.vae.training import decode_values

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 16

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


def euler_integrate(velocity_fn: VelocityFn, initial: np.ndarray, n_steps: int) -> np.ndarray:
    """Forward Euler from r = 0 to 1 on the left-endpoint grid r = m / n_steps."""
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    s = np.array(initial, dtype=np.float64)
    dt = 1.0 / n_steps
    for m in range(n_steps):
        s = s + dt * velocity_fn(s, m / n_steps)
    return s


def sample_scale(
    model: SarModel,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    k: int,
    y: Tensor,
    coarser_values: Optional[np.ndarray],
    n_steps: int,
    rngs: Sequence[np.random.Generator],
) -> np.ndarray:
    """Standardized values (B, |S_k|, C) of scale ``k``, one batch row per generator in ``rngs``.

    The initial noise of row b comes from ``rngs[b]`` only, so a sample does
    not depend on which other samples share its batch.
    """
    nodes = len(hierarchy.partitions[k - 1])
    initial = np.stack([rng.standard_normal((nodes, model.num_channels)) for rng in rngs])
    with no_grad():
        z = ar_step(model, k, y, hierarchy, coarser_values, batch=len(rngs))

        def velocity(s: np.ndarray, r: float) -> np.ndarray:
            return sampler_velocity(model, Tensor(s), r, graph, hierarchy, k, y, z).data

        return euler_integrate(velocity, initial, n_steps)


def generate_batch(
    model: SarModel,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    schedule: DenoisingSchedule,
    rngs: Sequence[np.random.Generator],
    y: Optional[Tensor] = None,
    vae=None,
) -> np.ndarray:
    """(B, N, F) generated states in physical (normalized) units.

    Raises:
        ValidationError: schedule length differs from the number of scales.
        MissingPrerequisiteError: latent-mode model without a VAE.
    """
    if schedule.num_scales != hierarchy.num_scales or schedule.num_scales != model.num_scales:
        raise ValidationError(
            f"Schedule {list(schedule.steps_per_scale)} does not match a {model.num_scales}-scale model."
        )
    if model.config.latent_mode and vae is None:
        raise MissingPrerequisiteError("A latent-mode SAR model needs its VAE to decode samples.")

    with no_grad():
        if y is None:
            y = encode_conditions(model, graph, hierarchy)
        values = np.zeros((len(rngs), graph.num_nodes, model.num_channels))
        for k in range(1, model.num_scales + 1):
            coarser = values[:, hierarchy.prefix(k - 1)] if k > 1 else None
            s_k = sample_scale(model, graph, hierarchy, k, y, coarser, schedule.steps_per_scale[k - 1], rngs)
            values[:, hierarchy.partitions[k - 1]] = s_k

    values = model.destandardize(values)
    if model.config.latent_mode:
        values = decode_values(vae, graph, values)
    return values


def generate(
    model: SarModel,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    schedule: DenoisingSchedule,
    seed: int,
    y_cache: Optional[Tensor] = None,
    vae=None,
) -> tuple[FieldState, int]:
    """One physical sample and its sampler node-evaluation count.

    Example:
        >>> state, cost = generate(model, graph, hierarchy, DenoisingSchedule((10, 6, 1)), seed=0, vae=vae)
    """
    values = generate_batch(model, graph, hierarchy, schedule, [seed_stream(seed, "sample")], y_cache, vae)
    return FieldState(values[0], "physical"), schedule.cost(hierarchy.sizes())


def generate_many(
    model: SarModel,
    graph: MeshGraph,
    hierarchy: ScaleHierarchy,
    schedule: DenoisingSchedule,
    seeds: Sequence[int],
    threads: int = 1,
    vae=None,
    y_cache: Optional[Tensor] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    logger: logging.Logger = logger,
) -> tuple[np.ndarray, int]:
    """Generates one sample per seed.

    Seeds are cut into fixed chunks of ``batch_size`` that run as batches on
    ``threads`` workers; sample i only draws from the stream of ``seeds[i]``,
    and the chunking does not depend on ``threads``.

    Args:
        model: Trained SAR model.
        graph: Mesh graph of the system.
        hierarchy: Its scale hierarchy.
        schedule: Euler steps per scale.
        seeds: One seed per sample.
        threads: Worker threads.
        vae: Companion VAE for latent-mode models.
        y_cache: Precomputed condition encoding.
        batch_size: Samples per batch.
        logger: Logger for progress messages.

    Returns:
        tuple: ((S, N, F) samples, total sampler node-evaluations)
    """
    if threads < 1 or batch_size < 1:
        raise ValidationError("threads and batch_size must be >= 1")
    if y_cache is None:
        with no_grad():
            y_cache = encode_conditions(model, graph, hierarchy)

    chunks = [list(seeds[i : i + batch_size]) for i in range(0, len(seeds), batch_size)]
    logger.info(
        f"Generating {len(seeds)} samples in {len(chunks)} batches on {threads} thread(s), "
        f"schedule {list(schedule.steps_per_scale)}"
    )
    done = []

    def run(chunk: list[int]) -> np.ndarray:
        rngs = [seed_stream(seed, "sample") for seed in chunk]
        values = generate_batch(model, graph, hierarchy, schedule, rngs, y_cache, vae)
        done.append(len(chunk))
        show_progress(len(done), len(chunks), "Sampling", f"{sum(done)}/{len(seeds)} samples")
        return values

    if threads == 1:
        results = [run(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))

    samples = np.concatenate(results) if results else np.zeros((0, graph.num_nodes, 0))
    return samples, len(seeds) * schedule.cost(hierarchy.sizes())
