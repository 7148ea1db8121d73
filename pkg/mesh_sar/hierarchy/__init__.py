from mesh_sar.hierarchy.hierarchy import (
    ScaleHierarchy,
    build_hierarchy,
    coarsen_edges,
    guillard_mask,
    load_hierarchy,
    save_hierarchy,
    scale_onehot,
)
