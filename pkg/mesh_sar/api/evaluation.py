import logging
import os
import time
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from mesh_sar.api.artifacts import artifact_path, load_sar, load_vae, read_manifest, require, write_manifest
from mesh_sar.api.data import load_run_dataset, load_run_hierarchies
from mesh_sar.api.utils import (
    DEFAULT_LOG_DIR,
    check_file_type,
    close_logger,
    generate_logger,
    get_file_info,
    show_progress,
)
from mesh_sar.config.run_config import RunConfig
from mesh_sar.eval import evaluate_samples, plot_metrics, r2_best_match, summary_frame, w2_distance, write_reports
from mesh_sar.exceptions import MeshSarError, MissingPrerequisiteError, ValidationError
from mesh_sar.meshgraph import Dataset, System, load_dataset, save_dataset
from mesh_sar.numcore import no_grad
from mesh_sar.sar import DenoisingSchedule, SarModel, encode_conditions, generate_many
from mesh_sar.utils import seed_stream
from mesh_sar.vae import VaeModel

SEED_RANGE = 2**31


def load_generator(config: RunConfig, logger: logging.Logger) -> tuple[SarModel, Optional[VaeModel]]:
    """Trained SAR model and, in latent mode, the VAE that decodes its samples."""
    prefix = artifact_path(config, "sar")
    require(prefix + ".json", "SAR checkpoint", "train-sar", logger)
    model, _ = load_sar(prefix, config, logger)
    vae = None
    if config.model.latent_mode:
        vae_prefix = artifact_path(config, "vae")
        require(vae_prefix + ".json", "VAE checkpoint", "train-vae", logger)
        vae, _ = load_vae(vae_prefix, config, logger)
    return model, vae


def sample_seeds(config: RunConfig, purpose: str, system: int, count: int) -> list[int]:
    return [int(s) for s in seed_stream(config.seed, purpose, system).integers(0, SEED_RANGE, size=count)]


def check_schedule(config: RunConfig, steps: Sequence[int], logger: logging.Logger) -> DenoisingSchedule:
    if len(steps) != config.model.num_scales:
        msg = f"Schedule {list(steps)} has {len(steps)} entries for a {config.model.num_scales}-scale model"
        logger.error(msg)
        raise ValidationError(msg)
    return DenoisingSchedule(tuple(int(s) for s in steps))


def sample(config: RunConfig, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Generates ``config.sampling.num_samples`` physical samples per system.

    Samples are stored in the normalized physical space of the training data, together with
    its channel statistics, so ``eval`` compares them with the ground truth directly.

    Args:
        config: Run configuration; ``sampling.steps_per_scale`` is the denoising schedule.
        log_dir: Root directory for log files.

    Returns:
        dict: status, message, log_file, samples path and the sampler node-evaluation count

    Raises:
        ValidationError: If the schedule length differs from the model's scale count
        MissingPrerequisiteError: If a checkpoint or hierarchy is missing or stale
    """
    logger_dict = generate_logger("sample", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        schedule = check_schedule(config, config.sampling.steps_per_scale, logger)
        physical = load_run_dataset(config, logger)
        hierarchies = load_run_hierarchies(config, physical, logger)
        model, vae = load_generator(config, logger)

        systems = []
        total_cost = 0
        for m, (system, hierarchy) in enumerate(zip(physical.systems, hierarchies)):
            seeds = sample_seeds(config, "sample-seeds", m, config.sampling.num_samples)
            values, cost = generate_many(
                model,
                system.graph,
                hierarchy,
                schedule,
                seeds,
                threads=config.sampling.threads,
                vae=vae,
                logger=logger,
            )
            systems.append(System(system.graph, values, "physical"))
            total_cost += cost
            logger.info(f"System {m}: {len(seeds)} samples, {cost} sampler node-evaluations")

        samples = Dataset(
            systems,
            channel_stats=physical.channel_stats,
            normalized=physical.normalized,
            metadata={
                "provenance": "generated",
                "schedule": list(schedule.steps_per_scale),
                "node_evaluations": total_cost,
            },
        )
        path = save_dataset(samples, artifact_path(config, "samples"))
        write_manifest(path, config, "sample", {"schedule": list(schedule.steps_per_scale)})

        return {
            "status": "Success",
            "message": f"Generated {config.sampling.num_samples} sample(s) for {len(systems)} system(s).",
            "log_file": log_file,
            "samples": path,
            "node_evaluations": total_cost,
        }

    except MeshSarError as e:
        logger.error(f"Error during sampling: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during sampling: {str(e)}")
        raise ValidationError(f"Invalid input during sampling: {e}") from e

    finally:
        close_logger(logger)


def load_reference(config: RunConfig, logger: logging.Logger) -> Dataset:
    """Held-out states when the run has them, else the training states."""
    path = artifact_path(config, "heldout")
    if os.path.exists(path):
        return load_dataset(path)
    logger.warning("No held-out split found; comparing against the training states")
    return load_run_dataset(config, logger)


def evaluate(config: RunConfig, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Computes the metric suite of the generated samples against the ground truth.

    Per system, writes ``metrics_<m>.csv``/``.json`` and the histogram curves ``pdf_<m>.csv``.
    Best-match R^2 searches the training trajectory; the distributional metrics use the
    held-out states.
    """
    logger_dict = generate_logger("eval", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        path = require(artifact_path(config, "samples"), "generated samples", "sample", logger)
        file = get_file_info(path, logger)
        check_file_type(file["extension"], "dataset")
        generated = load_dataset(file["path"])
        manifest = read_manifest(path, logger)
        if manifest.get("model_hash") != config.model_hash():
            logger.warning(f"Samples in {path} were generated under model hash {manifest.get('model_hash')}")
        training = load_run_dataset(config, logger)
        reference = load_reference(config, logger)
        if len(generated.systems) != len(training.systems):
            msg = f"Samples cover {len(generated.systems)} systems, the dataset has {len(training.systems)}"
            logger.error(msg)
            raise MissingPrerequisiteError(msg)

        outputs = []
        summary = {}
        for m, (gen, ref, train) in enumerate(zip(generated.systems, reference.systems, training.systems)):
            reports, curves = evaluate_samples(
                gen.snapshots,
                ref.snapshots,
                trajectory=train.snapshots,
                bins=config.sampling.histogram_bins,
                threads=config.sampling.threads,
                logger=logger,
            )
            paths = write_reports(reports, artifact_path(config, "metrics", system=m), logger)
            pdf_path = artifact_path(config, "pdf", system=m)
            curves.to_csv(pdf_path, index=False)
            for artifact in (paths["csv"], paths["json"], pdf_path):
                write_manifest(artifact, config, "eval", {"system": m})
            outputs.append({**paths, "pdf": pdf_path})

            scalars = summary_frame(reports).set_index("metric")["value"]
            summary[m] = {"w2": float(scalars["w2"]), "r2_best_match": float(scalars["r2_best_match"])}
            logger.info(f"System {m}: {summary[m]}")

        return {
            "status": "Success",
            "message": f"Evaluated {len(outputs)} system(s).",
            "log_file": log_file,
            "outputs": outputs,
            "summary": summary,
        }

    except MeshSarError as e:
        logger.error(f"Error during evaluation: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during evaluation: {str(e)}")
        raise ValidationError(f"Invalid input during evaluation: {e}") from e

    finally:
        close_logger(logger)


def default_schedules(config: RunConfig) -> list[tuple[int, ...]]:
    """The configured schedule and the uniform schedule with the same coarsest step count."""
    steps = tuple(config.sampling.steps_per_scale)
    uniform = (steps[0],) * config.model.num_scales
    return [uniform, steps] if uniform != steps else [steps]


def bench(
    config: RunConfig,
    schedules: Optional[Sequence[Sequence[int]]] = None,
    log_dir: str = DEFAULT_LOG_DIR,
) -> dict:
    """Sweeps denoising schedules and records cost against quality.

    Each schedule generates the same seeds on every system. A row holds the sampler
    node-evaluations of one sample (also broken down per scale), the ratio to the uniform
    schedule, the wall-clock of the whole batch, and W2 / mean best-match R^2 against the
    ground truth.

    Args:
        config: Run configuration.
        schedules: Step counts per scale; defaults to the configured and the uniform schedule.
        log_dir: Root directory for log files.

    Returns:
        dict: status, message, log_file, bench CSV path and the rows as records
    """
    logger_dict = generate_logger("bench", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        checked = [check_schedule(config, s, logger) for s in (schedules or default_schedules(config))]
        physical = load_run_dataset(config, logger)
        reference = load_reference(config, logger)
        hierarchies = load_run_hierarchies(config, physical, logger)
        model, vae = load_generator(config, logger)

        rows = []
        runs = len(checked) * len(physical.systems)
        for m, (system, hierarchy) in enumerate(zip(physical.systems, hierarchies)):
            sizes = hierarchy.sizes()
            seeds = sample_seeds(config, "bench-seeds", m, config.sampling.num_samples)
            with no_grad():
                y_cache = encode_conditions(model, system.graph, hierarchy)

            for schedule in checked:
                show_progress(len(rows) + 1, runs, "Bench", f"System {m}, schedule {list(schedule.steps_per_scale)}")
                uniform = DenoisingSchedule((schedule.steps_per_scale[0],) * schedule.num_scales)
                started = time.perf_counter()
                values, _ = generate_many(
                    model,
                    system.graph,
                    hierarchy,
                    schedule,
                    seeds,
                    threads=config.sampling.threads,
                    vae=vae,
                    y_cache=y_cache,
                    logger=logger,
                )
                wall_clock = time.perf_counter() - started

                row = {
                    "system": m,
                    "schedule": "-".join(str(s) for s in schedule.steps_per_scale),
                    "node_evaluations": schedule.cost(sizes),
                    "ratio_to_uniform": schedule.cost(sizes) / uniform.cost(sizes),
                    "wall_clock": wall_clock,
                    "num_samples": len(seeds),
                    "w2": w2_distance(values, reference.systems[m].snapshots),
                    "r2": float(np.mean([r2_best_match(v, system.snapshots) for v in values])),
                }
                for k, evaluations in enumerate(schedule.breakdown(sizes), start=1):
                    row[f"evaluations_scale_{k}"] = evaluations
                rows.append(row)
                logger.info(
                    f"System {m}, schedule {row['schedule']}: {row['node_evaluations']} node-evaluations, "
                    f"{wall_clock:.3f}s, W2={row['w2']:.6g}, R2={row['r2']:.4f}"
                )

        frame = pd.DataFrame(rows)
        path = artifact_path(config, "bench")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        frame.to_csv(path, index=False)
        write_manifest(path, config, "bench", {"schedules": [list(s.steps_per_scale) for s in checked]})

        return {
            "status": "Success",
            "message": f"Benchmarked {len(checked)} schedule(s) on {len(physical.systems)} system(s).",
            "log_file": log_file,
            "bench": path,
            "rows": frame.to_dict("records"),
        }

    except MeshSarError as e:
        logger.error(f"Error during benchmarking: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during benchmarking: {str(e)}")
        raise ValidationError(f"Invalid input during benchmarking: {e}") from e

    finally:
        close_logger(logger)


def default_charts(config: RunConfig) -> list[dict]:
    charts = []
    for name, title in (("vae_history", "VAE training loss"), ("sar_history", "SAR training loss")):
        charts.append({"csv": artifact_path(config, name), "x": "epoch", "y": ["loss"], "kind": "line",
                       "title": title, "log_y": True, "output": f"{name}.svg"})
    bench_csv = artifact_path(config, "bench")
    charts.append({"csv": bench_csv, "x": "node_evaluations", "y": ["w2"], "kind": "line", "group": "system",
                   "title": "W2 against sampler cost", "output": "bench_tradeoff.svg"})
    charts.append({"csv": bench_csv, "x": "schedule", "y": ["node_evaluations"], "kind": "bar",
                   "title": "Sampler node-evaluations per schedule", "output": "bench_cost.svg"})
    return charts


def plot(
    config: RunConfig,
    input_csv: Optional[str] = None,
    x: Optional[str] = None,
    y: Optional[Sequence[str]] = None,
    kind: str = "line",
    output: Optional[str] = None,
    log_dir: str = DEFAULT_LOG_DIR,
) -> dict:
    """Renders metric CSV files to SVG charts.

    Without ``input_csv`` every default chart whose CSV exists is drawn: the training
    losses of both models and the bench trade-off and cost charts.
    """
    logger_dict = generate_logger("plot", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        plot_dir = artifact_path(config, "plots")
        if input_csv:
            if not x or not y:
                raise ValidationError("plot needs --x and --y with --input")
            name = os.path.splitext(os.path.basename(input_csv))[0]
            charts = [{"csv": input_csv, "x": x, "y": list(y), "kind": kind, "title": name,
                       "output": output or f"{name}.svg"}]
        else:
            charts = [c for c in default_charts(config) if os.path.exists(c["csv"])]
            if not charts:
                msg = f"No metric files under {config.output_dir}; run train-vae, train-sar or bench first."
                logger.error(msg)
                raise MissingPrerequisiteError(msg)

        paths = []
        for chart in charts:
            file = get_file_info(chart["csv"], logger)
            check_file_type(file["extension"], "metrics")
            target = chart["output"] if os.path.dirname(chart["output"]) else os.path.join(plot_dir, chart["output"])
            check_file_type(os.path.splitext(target)[1], "plot")
            frame = pd.read_csv(file["path"])
            paths.append(
                plot_metrics(
                    frame,
                    target,
                    chart["x"],
                    chart["y"],
                    kind=chart["kind"],
                    group=chart.get("group"),
                    title=chart.get("title"),
                    log_y=chart.get("log_y", False),
                    logger=logger,
                )
            )

        return {
            "status": "Success",
            "message": f"Rendered {len(paths)} chart(s).",
            "log_file": log_file,
            "plots": paths,
        }

    except MeshSarError as e:
        logger.error(f"Error during plotting: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during plotting: {str(e)}")
        raise ValidationError(f"Invalid input during plotting: {e}") from e

    finally:
        close_logger(logger)
