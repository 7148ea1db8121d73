import os

from mesh_sar.api.artifacts import (
    artifact_path,
    load_sar,
    load_vae,
    require,
    save_model,
    write_manifest,
)
from mesh_sar.api.data import load_run_dataset, load_run_hierarchies
from mesh_sar.api.utils import DEFAULT_LOG_DIR, close_logger, generate_logger
from mesh_sar.config.run_config import RunConfig
from mesh_sar.exceptions import MeshSarError, ValidationError
from mesh_sar.meshgraph import load_dataset, save_dataset
from mesh_sar.sar import training as sar_training
from mesh_sar.sar.model import SarModel
from mesh_sar.vae import training as vae_training


def train_vae(config: RunConfig, resume: bool = False, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Trains the companion VAE on the training dataset and checkpoints it.

    With ``resume`` an existing checkpoint under the same model hash is continued.
    """
    logger_dict = generate_logger("train_vae", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        dataset = load_run_dataset(config, logger)
        prefix = artifact_path(config, "vae")
        state = None
        if resume and os.path.exists(prefix + ".json"):
            _, state = load_vae(prefix, config, logger)
            logger.info(f"Resuming from {prefix} at Adam step {state['metadata']['adam_step']}")

        result = vae_training.train_vae(dataset, config, logger, resume=state)
        history = result["history"]
        metadata = {
            "num_channels": dataset.num_channels,
            "dim": dataset.systems[0].graph.dim,
            "history": history.to_dict("records"),
            "stopped": result["stopped"],
        }
        save_model(prefix, result["model"], config, result["group"], metadata, logger)
        write_manifest(prefix, config, "train-vae", {"epochs": len(history)})
        history_path = artifact_path(config, "vae_history")
        history.to_csv(history_path, index=False)
        write_manifest(history_path, config, "train-vae")

        r2 = vae_training.reconstruction_r2(result["model"], dataset)
        logger.info(f"VAE reconstruction R2 on the training set: {r2:.6f}")
        return {
            "status": "Success",
            "message": f"VAE trained for {len(history)} epochs (R2={r2:.4f}).",
            "log_file": log_file,
            "checkpoint": prefix,
            "history": history_path,
            "r2": r2,
        }

    except MeshSarError as e:
        logger.error(f"Error during VAE training: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during VAE training: {str(e)}")
        raise ValidationError(f"Invalid input during VAE training: {e}") from e

    finally:
        close_logger(logger)


def encode_latents(config: RunConfig, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Encodes the training dataset into per-node VAE latents (posterior means)."""
    logger_dict = generate_logger("encode_latents", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        dataset = load_run_dataset(config, logger)
        prefix = artifact_path(config, "vae")
        require(prefix + ".json", "VAE checkpoint", "train-vae", logger)
        vae, _ = load_vae(prefix, config, logger)
        latents = vae_training.encode_dataset(vae, dataset, deterministic=True, seed=config.seed)
        path = save_dataset(latents, artifact_path(config, "latents"))
        write_manifest(path, config, "encode-latents", {"vae": prefix})
        logger.info(f"Encoded {len(latents.systems)} system(s) into {latents.num_channels} latent channel(s)")

        return {
            "status": "Success",
            "message": f"Encoded latents with {latents.num_channels} channel(s).",
            "log_file": log_file,
            "latents": path,
        }

    except MeshSarError as e:
        logger.error(f"Error during latent encoding: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during latent encoding: {str(e)}")
        raise ValidationError(f"Invalid input during latent encoding: {e}") from e

    finally:
        close_logger(logger)


def train_sar(config: RunConfig, resume: bool = False, log_dir: str = DEFAULT_LOG_DIR) -> dict:
    """Trains the SAR model on latents (latent mode) or on the normalized physical data.

    In latent mode the VAE checkpoint and the encoded latents must exist.
    """
    logger_dict = generate_logger("train_sar", log_dir)
    logger = logger_dict["logger"]
    log_file = logger_dict["log_file"]

    try:
        physical = load_run_dataset(config, logger)
        hierarchies = load_run_hierarchies(config, physical, logger)
        vae_prefix = None
        if config.model.latent_mode:
            vae_prefix = artifact_path(config, "vae")
            require(vae_prefix + ".json", "VAE checkpoint", "train-vae", logger)
            load_vae(vae_prefix, config, logger)
            path = require(artifact_path(config, "latents"), "latent dataset", "encode-latents", logger)
            dataset = load_dataset(path)
        else:
            dataset = physical

        prefix = artifact_path(config, "sar")
        state = None
        if resume and os.path.exists(prefix + ".json"):
            model, state = load_sar(prefix, config, logger)
            logger.info(f"Resuming from {prefix} at Adam step {state['metadata']['adam_step']}")
        else:
            graph = dataset.systems[0].graph
            model = SarModel(
                config.model, dataset.num_channels, graph.dim, graph.node_conditions.shape[1], config.seed
            )

        result = sar_training.train_sar(model, dataset, hierarchies, config, logger, resume=state)
        history = result["history"]
        metadata = {
            **model.metadata(),
            "history": history.to_dict("records"),
            "stopped": result["stopped"],
            "vae": vae_prefix,
            "space": dataset.space_tag,
        }
        save_model(prefix, model, config, result["group"], metadata, logger)
        write_manifest(prefix, config, "train-sar", {"epochs": len(history), "vae": vae_prefix})
        history_path = artifact_path(config, "sar_history")
        history.to_csv(history_path, index=False)
        write_manifest(history_path, config, "train-sar")

        final = f", final loss {history['loss'].iloc[-1]:.6g}" if len(history) else ""
        return {
            "status": "Success",
            "message": f"SAR model trained for {len(history)} epochs{final}.",
            "log_file": log_file,
            "checkpoint": prefix,
            "history": history_path,
        }

    except MeshSarError as e:
        logger.error(f"Error during SAR training: {str(e)}")
        raise

    except ValueError as e:
        logger.error(f"Invalid input during SAR training: {str(e)}")
        raise ValidationError(f"Invalid input during SAR training: {e}") from e

    finally:
        close_logger(logger)
