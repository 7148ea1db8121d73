from mesh_sar.meshgraph.dataset_io import load_dataset, save_dataset
from mesh_sar.meshgraph.generators import gen_bimodal, gen_quasiperiodic, grid_mesh
from mesh_sar.meshgraph.meshgraph import (
    ChannelStats,
    Dataset,
    FieldState,
    MeshGraph,
    System,
    build_mesh_graph,
    denormalize,
    normalize,
    split_snapshots,
)
