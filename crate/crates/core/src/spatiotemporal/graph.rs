//! Intra-frame segment graph: kNN over hull distances, and spatial feature
//! pooling along its edges.

use crate::features::StructuralFeature;
use crate::segmentation::SegmentSet;
use crate::spatiotemporal::hull::{convex_hull, mtd, ConvexHull};

/// A directed edge to a neighboring segment with its hull distance.
#[derive(Clone, Copy, Debug)]
pub struct GraphEdge {
    pub target: usize,
    pub distance: f64,
}

/// The kNN graph over a frame's segments. Out-edges are sorted by
/// (distance, target id), which fixes the summation order of pooling and
/// keeps results reproducible under segment relabeling.
#[derive(Clone, Debug)]
pub struct SegmentGraph {
    pub edges: Vec<Vec<GraphEdge>>,
}

impl SegmentGraph {
    pub fn vertex_count(&self) -> usize {
        self.edges.len()
    }
}

/// Symmetric matrix of pairwise hull distances.
pub fn pairwise_hull_distances(hulls: &[ConvexHull]) -> Vec<Vec<f64>> {
    let m = hulls.len();
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = mtd(&hulls[i], &hulls[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Builds the kNN graph from a pairwise distance matrix: each vertex links
/// to its `k` nearest others (all of them when m <= k), ties broken by lower
/// segment id.
pub fn build_spatial_graph(distances: &[Vec<f64>], k: usize) -> SegmentGraph {
    let m = distances.len();
    let mut edges = Vec::with_capacity(m);
    for i in 0..m {
        let mut cand: Vec<GraphEdge> = (0..m)
            .filter(|&j| j != i)
            .map(|j| GraphEdge {
                target: j,
                distance: distances[i][j],
            })
            .collect();
        cand.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.target.cmp(&b.target))
        });
        cand.truncate(k);
        edges.push(cand);
    }
    SegmentGraph { edges }
}

/// Convenience: hulls, distances and graph for a segment set.
pub fn build_spatial_graph_for_set(set: &SegmentSet, k: usize) -> SegmentGraph {
    let hulls: Vec<ConvexHull> = set.segments.iter().map(|s| convex_hull(s.points())).collect();
    build_spatial_graph(&pairwise_hull_distances(&hulls), k)
}

/// Softmax weights over `exp(-smoothing * d)`, normalized to sum to one.
/// Stabilized against large distances; evaluation order follows the input.
pub fn softmax_weights(distances: &[f64], smoothing: f64) -> Vec<f64> {
    if distances.is_empty() {
        return Vec::new();
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances
        .iter()
        .map(|d| (-smoothing * (d - min)).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Spatially pooled features: for each segment, the softmax-weighted average
/// of its graph neighbors' structural features. Isolated vertices (single
/// segment frames) fall back to their own feature.
pub fn spatial_pool(graph: &SegmentGraph, features: &[StructuralFeature], smoothing: f64) -> Vec<Vec<f64>> {
    assert_eq!(graph.vertex_count(), features.len());
    graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, edges)| {
            if edges.is_empty() {
                return features[i].values.clone();
            }
            let dists: Vec<f64> = edges.iter().map(|e| e.distance).collect();
            let weights = softmax_weights(&dists, smoothing);
            let mut acc = vec![0.0; features[i].values.len()];
            for (e, w) in edges.iter().zip(&weights) {
                for (a, v) in acc.iter_mut().zip(&features[e.target].values) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect()
}

/// The per-vertex softmax weight vectors used by [`spatial_pool`], exposed
/// for diagnostics and normalization checks.
pub fn spatial_pool_weights(graph: &SegmentGraph, smoothing: f64) -> Vec<Vec<f64>> {
    graph
        .edges
        .iter()
        .map(|edges| {
            let dists: Vec<f64> = edges.iter().map(|e| e.distance).collect();
            softmax_weights(&dists, smoothing)
        })
        .collect()
}
