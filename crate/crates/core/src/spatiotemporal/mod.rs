//! The complementary per-segment feature: spatial pooling over the
//! intra-frame hull-distance kNN graph, temporal pooling over cross-frame
//! correspondence chains, and their average.

pub mod graph;
pub mod hull;
pub mod temporal;

pub use graph::{
    build_spatial_graph, build_spatial_graph_for_set, pairwise_hull_distances, softmax_weights,
    spatial_pool, spatial_pool_weights, GraphEdge, SegmentGraph,
};
pub use hull::{convex_hull, mtd, segment_mtd, ConvexHull};
pub use temporal::{
    combine_pooled, correspond, temporal_pool, temporal_pool_weights, CorrespondenceMap,
    FrameWindow, WindowEntry,
};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingConfig {
    /// Out-degree of the intra-frame kNN graph.
    #[serde(alias = "k_s")]
    pub graph_neighbors: usize,
    /// How many past frames temporal chains may span.
    #[serde(alias = "k_t")]
    pub temporal_depth: usize,
    /// Softmax smoothing factor shared by spatial and temporal pooling.
    #[serde(alias = "beta")]
    pub smoothing: f64,
    /// Radius of the motion-compensated centroid filter, meters.
    #[serde(alias = "radius_r")]
    pub correspondence_radius: f64,
    /// Size of the feature-space kNN candidate set for correspondences.
    #[serde(alias = "knn_feature_k")]
    pub feature_knn: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            graph_neighbors: 5,
            temporal_depth: 3,
            smoothing: 0.1,
            correspondence_radius: 1.0,
            feature_knn: 8,
        }
    }
}
