"""Run configuration: nested frozen dataclasses loaded from JSON.

Defaults follow the reference model size (F_model = F_emb = F_VAE = 128,
F_L = 1, two blocks per module, K = 3); desk-scale runs shrink the widths.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any

from mesh_sar.exceptions import ValidationError
from mesh_sar.utils import stable_hash

logger = logging.getLogger(__name__)

CONFIG_DIR_ENV = "MESH_SAR_CONFIG_DIR"


@dataclass(frozen=True)
class ModelConfig:
    f_model: int = 128
    f_emb: int = 128
    f_vae: int = 128
    f_latent: int = 1
    l_cond: int = 2
    l_ar: int = 2
    l_sampler: int = 2
    num_scales: int = 3
    num_heads: int = 4
    num_slices: int = 32
    latent_mode: bool = True
    nodewise_sampler: bool = False
    cond_encoder: bool = True


@dataclass(frozen=True)
class VaeConfig:
    learning_rate: float = 1e-4
    kl_weight: float = 1e-6
    latent_noise: float = 0.01
    batch_size: int = 8
    patience_epochs: int = 10
    max_epochs: int = 500
    floor_lr: float = 1e-6


@dataclass(frozen=True)
class SarConfig:
    learning_rate: float = 1e-3
    r_draws: int = 4
    coarse_noise: float = 0.01
    batch_size: int = 8
    steps_per_epoch: int = 50
    patience_epochs: int = 10
    max_epochs: int = 500
    floor_lr: float = 1e-6


@dataclass(frozen=True)
class DataConfig:
    generator: str = "quasiperiodic"
    grid_nx: int = 8
    grid_ny: int = 8
    amplitude_a: float = 1.0
    mode_m: float = 1.0
    noise_sigma: float = 0.05
    num_snapshots: int = 512
    num_systems: int = 1
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class SamplingConfig:
    steps_per_scale: tuple[int, ...] = (10, 6, 1)
    num_samples: int = 200
    threads: int = 1
    histogram_bins: int = 30


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: ModelConfig = field(default_factory=ModelConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    sar: SarConfig = field(default_factory=SarConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    precision: str = "float64"
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def model_hash(self) -> str:
        """Hash of the architecture section; checkpoints are only valid under the same value."""
        return stable_hash(dataclasses.asdict(self.model))


SECTIONS = {
    "model": ModelConfig,
    "vae": VaeConfig,
    "sar": SarConfig,
    "data": DataConfig,
    "sampling": SamplingConfig,
}


def _coerce(cls, name: str, value: Any, logger: logging.Logger) -> Any:
    """Casts a JSON/CLI value to the declared type of ``cls.name``."""
    declared = {f.name: f for f in dataclasses.fields(cls)}[name]
    default = declared.default if declared.default is not dataclasses.MISSING else declared.default_factory()
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(int(v) for v in value)
        return str(value)
    except (TypeError, ValueError) as e:
        msg = f"Invalid value for {cls.__name__}.{name}: {value!r}"
        logger.error(msg)
        raise ValidationError(msg) from e


def _build_section(cls, values: dict, logger: logging.Logger):
    if not isinstance(values, dict):
        raise ValidationError(f"Config section for {cls.__name__} must be an object.")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        msg = f"Unknown keys in {cls.__name__}: {', '.join(unknown)}"
        logger.error(msg)
        raise ValidationError(msg)
    return cls(**{k: _coerce(cls, k, v, logger) for k, v in values.items()})


def config_from_dict(data: dict, logger: logging.Logger = logger) -> RunConfig:
    """Builds and validates a RunConfig.

    Raises:
        ValidationError: unknown keys, missing seed, wrong types or invalid values.
    """
    unknown = sorted(set(data) - set(SECTIONS) - {"seed", "precision", "output_dir"})
    if unknown:
        msg = f"Unknown config keys: {', '.join(unknown)}"
        logger.error(msg)
        raise ValidationError(msg)
    if "seed" not in data or data["seed"] is None:
        msg = "Config must set a seed."
        logger.error(msg)
        raise ValidationError(msg)

    sections = {name: _build_section(cls, data.get(name, {}), logger) for name, cls in SECTIONS.items()}
    try:
        seed = int(data["seed"])
    except (TypeError, ValueError) as e:
        raise ValidationError(f"Seed must be an integer, got {data['seed']!r}") from e
    config = RunConfig(
        seed=seed,
        precision=str(data.get("precision", "float64")),
        output_dir=str(data.get("output_dir", "runs")),
        **sections,
    )
    validate_config(config, logger)
    return config


def validate_config(config: RunConfig, logger: logging.Logger = logger) -> None:
    m, s = config.model, config.sampling
    problems = []
    if config.precision not in ("float64", "float32"):
        problems.append(f"precision must be float64 or float32, got {config.precision}")
    if m.f_model % m.num_heads != 0:
        problems.append(f"f_model {m.f_model} is not divisible by num_heads {m.num_heads}")
    if m.f_emb % 2 != 0:
        problems.append(f"f_emb must be even, got {m.f_emb}")
    for name in ("f_model", "f_emb", "f_vae", "f_latent", "num_scales", "num_heads", "num_slices"):
        if getattr(m, name) < 1:
            problems.append(f"model.{name} must be >= 1")
    for name in ("l_cond", "l_ar", "l_sampler"):
        if getattr(m, name) < 0:
            problems.append(f"model.{name} must be >= 0")
    if len(s.steps_per_scale) != m.num_scales:
        problems.append(
            f"steps_per_scale has {len(s.steps_per_scale)} entries for {m.num_scales} scales"
        )
    if any(step < 1 for step in s.steps_per_scale):
        problems.append("every entry of steps_per_scale must be >= 1")
    if s.threads < 1 or s.num_samples < 1:
        problems.append("sampling.threads and sampling.num_samples must be >= 1")
    if config.data.generator not in ("quasiperiodic", "bimodal"):
        problems.append(f"Unknown generator {config.data.generator}")
    if not 0 <= config.data.holdout_fraction < 1:
        problems.append("data.holdout_fraction must lie in [0, 1)")
    for section in (config.vae, config.sar):
        if section.batch_size < 1 or section.patience_epochs < 1 or section.max_epochs < 1:
            problems.append("batch_size, patience_epochs and max_epochs must be >= 1")
        if not section.learning_rate > section.floor_lr > 0:
            problems.append("learning_rate must exceed floor_lr > 0")
    if config.sar.r_draws < 1:
        problems.append("sar.r_draws must be >= 1")

    if problems:
        msg = "Invalid config: " + "; ".join(problems)
        logger.error(msg)
        raise ValidationError(msg)


def resolve_config_path(path: str) -> str:
    """Resolves a bare file name against $MESH_SAR_CONFIG_DIR when it is not found as given."""
    if os.path.exists(path) or os.path.dirname(path):
        return path
    config_dir = os.environ.get(CONFIG_DIR_ENV)
    if config_dir:
        return os.path.join(config_dir, path)
    return path


def load_config(path: str, logger: logging.Logger = logger) -> RunConfig:
    path = resolve_config_path(path)
    if not os.path.exists(path):
        msg = f"Config file not found: {path}"
        logger.error(msg)
        raise ValidationError(msg)
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"Config {path} is not valid JSON: {e}") from e
    return config_from_dict(data, logger)


def apply_overrides(
    config: RunConfig, overrides: dict[str, Any], logger: logging.Logger = logger
) -> RunConfig:
    """Returns a copy of ``config`` with ``section.key`` (or top-level) overrides applied.

    Example:
        >>> apply_overrides(config, {"sampling.steps_per_scale": "10,6,1", "seed": 3})
    """
    data = config.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.rpartition(".")
        if section:
            if section not in SECTIONS:
                raise ValidationError(f"Unknown config section: {section}")
            data[section][key] = value
        else:
            data[key] = value
    return config_from_dict(data, logger)


def parse_set_option(option: str) -> tuple[str, str]:
    """Splits ``section.key=value`` as given to ``--set``."""
    key, sep, value = option.partition("=")
    if not sep or not key:
        raise ValidationError(f"--set expects section.key=value, got {option!r}")
    return key.strip(), value.strip()


def default_config(seed: int, **overrides) -> RunConfig:
    return apply_overrides(RunConfig(seed=seed), overrides) if overrides else RunConfig(seed=seed)
