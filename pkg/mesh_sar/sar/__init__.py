from mesh_sar.sar.model import (
    AutoregressiveModule,
    ConditionEncoder,
    DenoisingSchedule,
    FlowSampler,
    SarModel,
    ar_step,
    condition_inputs,
    encode_conditions,
    geometry_inputs,
    sampler_velocity,
)
from mesh_sar.sar.sampling import euler_integrate, generate, generate_batch, generate_many, sample_scale
from mesh_sar.sar.training import (
    draw_training_items,
    fm_loss,
    probability_path,
    train_sar,
    value_stats,
    velocity_loss,
)
