//! Tile graphs: spatial and embedding-space k-NN adjacency, directed
//! DeltaCon, the off-diagonal shuffle and neighbor-distance heatmaps.

mod adjacency;
mod deltacon;
mod heatmap;
mod tiles;

pub use adjacency::{
    degree_pair, embedding_adjacency, gaussian_kernel, knn_adjacency, rewire_edges, shuffle_offdiagonal,
    spatial_adjacency, SpatialGraph,
};
pub use deltacon::{deltacon, deltacon_s, DeltaConConfig, DeltaConReport, EpsilonPolicy};
pub use heatmap::{joint_max_normalize, mean_neighbor_distance, write_heatmap_csv};
pub use tiles::TileSet;
