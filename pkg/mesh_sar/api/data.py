import logging

from mesh_sar.api.artifacts import artifact_path, require, write_manifest
from mesh_sar.api.utils import (
    DEFAULT_LOG_DIR,
    check_file_type,
    close_logger,
    generate_logger,
    get_file_info,
    show_progress,
)
from mesh_sar.config.run_config import RunConfig
from mesh_sar.exceptions import MeshSarError, MissingPrerequisiteError, ValidationError
from mesh_sar.hierarchy import ScaleHierarchy, build_hierarchy, load_hierarchy, save_hierarchy
from mesh_sar.meshgraph import Dataset, gen_bimodal, gen_quasiperiodic, load_dataset, normalize, save_dataset
from mesh_sar.meshgraph.meshgraph import split_snapshots
from mesh_sar.utils import seed_stream


def gen_data(config: RunConfig, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Generates the synthetic dataset of ``config.data``, normalizes it and holds out a split.

    Returns:
        dict: status, message, log_file, dataset and heldout paths
    """
    logger_dict = generate_logger("gen_data", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        data = config.data
        logger.info(f"Generating {data.generator} data on a {data.grid_nx}x{data.grid_ny} grid")
        if data.generator == "quasiperiodic":
            raw = gen_quasiperiodic(
                data.grid_nx, data.grid_ny, data.amplitude_a, data.num_snapshots, config.seed, data.num_systems
            )
        else:
            raw = gen_bimodal(
                data.grid_nx,
                data.grid_ny,
                data.mode_m,
                data.noise_sigma,
                data.num_snapshots,
                config.seed,
                data.num_systems,
            )
        dataset = normalize(raw)

        paths = {"dataset": artifact_path(config, "dataset")}
        if data.holdout_fraction > 0:
            train, held = split_snapshots(dataset, data.holdout_fraction, seed_stream(config.seed, "holdout"))
            paths["heldout"] = save_dataset(held, artifact_path(config, "heldout"))
            write_manifest(paths["heldout"], config, "gen-data", {"split": "heldout"})
            dataset = train
        save_dataset(dataset, paths["dataset"])
        write_manifest(paths["dataset"], config, "gen-data", {"split": "train"})
        logger.info(f"Saved {sum(s.num_snapshots for s in dataset.systems)} training snapshots")

        return {
            "status": "Success",
            "message": f"Generated {len(dataset.systems)} system(s).",
            "log_file": log_file,
            **paths,
        }

    except MeshSarError as e:
        logger.error(f"Error during data generation: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during data generation: {str(e)}")
        raise ValidationError(f"Invalid input during data generation: {e}") from e

    finally:
        close_logger(logger)


def load_run_dataset(config: RunConfig, logger: logging.Logger) -> Dataset:
    path = require(artifact_path(config, "dataset"), "training dataset", "gen-data", logger)
    file = get_file_info(path, logger)
    check_file_type(file["extension"], "dataset")
    return load_dataset(file["path"])


def build_hierarchies(config: RunConfig, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Builds and saves one scale hierarchy per system of the training dataset."""
    logger_dict = generate_logger("hierarchy", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        dataset = load_run_dataset(config, logger)
        paths = []
        for m, system in enumerate(dataset.systems):
            show_progress(m + 1, len(dataset.systems), "Hierarchy", f"System {m + 1} of {len(dataset.systems)}")
            hierarchy = build_hierarchy(system.graph, config.model.num_scales, logger)
            path = save_hierarchy(hierarchy, artifact_path(config, "hierarchy", system=m))
            write_manifest(path, config, "hierarchy", {"sizes": hierarchy.sizes()})
            logger.info(f"System {m}: scale sizes {hierarchy.sizes()}")
            paths.append(path)

        return {
            "status": "Success",
            "message": f"Built {len(paths)} hierarchies with {config.model.num_scales} scales.",
            "log_file": log_file,
            "hierarchies": paths,
        }

    except MeshSarError as e:
        logger.error(f"Error during hierarchy construction: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during hierarchy construction: {str(e)}")
        raise ValidationError(f"Invalid input during hierarchy construction: {e}") from e

    finally:
        close_logger(logger)


def load_run_hierarchies(config: RunConfig, dataset: Dataset, logger: logging.Logger) -> list[ScaleHierarchy]:
    """Saved hierarchies of every system; their scale count must match the model."""
    hierarchies = []
    for m in range(len(dataset.systems)):
        path = require(artifact_path(config, "hierarchy", system=m), "scale hierarchy", "hierarchy", logger)
        hierarchy = load_hierarchy(path)
        if hierarchy.num_scales != config.model.num_scales:
            msg = (
                f"Hierarchy {path} has {hierarchy.num_scales} scales but the config asks for "
                f"{config.model.num_scales}; rerun `hierarchy`."
            )
            logger.error(msg)
            raise MissingPrerequisiteError(msg)
        hierarchies.append(hierarchy)
    return hierarchies
