from mesh_sar.numcore import functional
from mesh_sar.numcore.checkpoint import (
    load_checkpoint,
    restore_training_arrays,
    save_checkpoint,
    training_arrays,
)
from mesh_sar.numcore.layers import MLP, LayerNorm, Linear, Module
from mesh_sar.numcore.optim import ParamGroup, PlateauSchedule, adam_step, plateau_update
from mesh_sar.numcore.tensor import (
    Tensor,
    as_tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_debug,
    set_default_dtype,
)
