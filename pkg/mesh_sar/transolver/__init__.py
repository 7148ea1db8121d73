from mesh_sar.transolver.attention import PhysicsAttention, slice_weights
from mesh_sar.transolver.blocks import AdaLNZeroBlock, Modulation, TransolverBlock
from mesh_sar.transolver.embedding import frequencies, sinusoidal_embedding
