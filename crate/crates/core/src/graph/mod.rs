//! Exact neighbor search, farthest point sampling, dilated and annular
//! neighbor selection, and the multi-resolution point hierarchy.

mod fps;
mod hierarchy;
mod kdtree;
mod neighbors;

pub use fps::{farthest_point_sampling, farthest_point_sampling_from, fps_start};
pub use hierarchy::{
    build_fusion_graphs, build_hierarchy, downsample_labels, interpolation_table, ring_rate, FusionDump,
    FusionGraphs, GraphDump, HierarchyConfig, HierarchyLevel, HierarchyLevels, InterpolationTable, LevelDump,
};
pub use kdtree::{brute_force_nearest, Candidate, KdTree};
pub use neighbors::{
    annular_knn, annular_ranks, dilated_ranks, expansion_size, knn_graph, knn_search, knn_search_brute, sparse_knn,
    NeighborMode, SparseNeighborhood,
};
