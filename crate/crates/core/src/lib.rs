//! Segment-based LiDAR place recognition.
//!
//! A LiDAR sweep is reduced to Euclidean clusters (segments), each segment is
//! described by a structural feature vector, features are pooled over the
//! intra-frame neighborhood graph and over temporal correspondences to recent
//! frames, and the per-segment feature pairs are aggregated by second-order
//! max pooling plus a Power-Euclidean spectral transform into one
//! fixed-length, rotation-invariant global descriptor per frame. Descriptors
//! are compared by cosine distance against a time-ordered database to decide
//! whether a place has been visited before.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`ingest`]: KITTI odometry layout readers and a deterministic synthetic
//!   scene generator.
//! - [`segmentation`]: ground removal and Euclidean clustering.
//! - [`features`]: per-segment structural descriptors (pluggable extractor).
//! - [`spatiotemporal`]: convex-hull distance graphs, spatial pooling,
//!   cross-frame correspondence chains and temporal pooling.
//! - [`aggregation`]: second-order pooling, the Power-Euclidean transform and
//!   descriptor finalization plus the descriptor file format.
//! - [`retrieval`]: the descriptor database and top-1 place queries.
//! - [`evaluation`]: precision/recall scoring, robustness perturbations and
//!   the ablation benchmark.
//! - [`pipeline`]: per-frame orchestration of all stages.
//! - [`cli`]: the `placerec` command implementations.

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geom;
pub mod ingest;
pub mod pipeline;
pub mod retrieval;
pub mod segmentation;
pub mod spatiotemporal;

pub use error::{Error, Result};
pub use geom::{Point3, Pose};
pub use ingest::{PointCloudFrame, Sequence};
