from mesh_sar.config.run_config import (
    CONFIG_DIR_ENV,
    DataConfig,
    ModelConfig,
    RunConfig,
    SamplingConfig,
    SarConfig,
    VaeConfig,
    apply_overrides,
    config_from_dict,
    default_config,
    load_config,
    parse_set_option,
    resolve_config_path,
    validate_config,
)
