from mesh_sar.vae.model import (
    NUM_MP_LAYERS,
    GraphCoder,
    MessagePassingLayer,
    VaeModel,
    kl_divergence,
    reparameterize,
    vae_loss,
)
from mesh_sar.vae.training import (
    build_vae,
    decode_values,
    encode_dataset,
    encode_system,
    reconstruction_r2,
    train_vae,
    union_graph,
)
