//! Cross-frame segment correspondence and temporal feature pooling.
//!
//! Correspondences link each segment of the current frame to at most one
//! segment of the previous frame: the feature-space kNN candidates are
//! filtered by a motion-compensated centroid radius, and the survivor with
//! the smallest feature distance wins. Chains of such links across the
//! window yield the temporally pooled feature.

use std::collections::VecDeque;

use crate::features::StructuralFeature;
use crate::geom::{Point3, Pose};
use crate::spatiotemporal::graph::softmax_weights;
use crate::spatiotemporal::PoolingConfig;

/// Per current-frame segment, the matched segment id of the previous frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceMap {
    pub links: Vec<Option<usize>>,
}

impl CorrespondenceMap {
    pub fn matched_count(&self) -> usize {
        self.links.iter().filter(|l| l.is_some()).count()
    }
}

/// Estimates segment correspondences from the current frame to the previous
/// one.
///
/// `current_to_previous` maps current sensor coordinates into the previous
/// sensor frame. For each current segment: take the `feature_knn` nearest
/// previous features, intersect with previous centroids within
/// `correspondence_radius` of the transformed current centroid, and keep the
/// intersection element minimizing feature distance (ties: smaller centroid
/// distance, then lower id). No survivor means no correspondence.
pub fn correspond(
    current_features: &[StructuralFeature],
    current_centroids: &[Point3],
    previous_features: &[StructuralFeature],
    previous_centroids: &[Point3],
    current_to_previous: &Pose,
    cfg: &PoolingConfig,
) -> CorrespondenceMap {
    let m_prev = previous_features.len();
    let mut links = Vec::with_capacity(current_features.len());

    for (feat, centroid) in current_features.iter().zip(current_centroids) {
        if m_prev == 0 {
            links.push(None);
            continue;
        }

        // Feature-space kNN.
        let mut by_feature: Vec<(f64, usize)> = previous_features
            .iter()
            .enumerate()
            .map(|(j, pf)| (feat.euclidean_distance(pf), j))
            .collect();
        by_feature.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        by_feature.truncate(cfg.feature_knn);

        // Radius filter around the motion-compensated centroid.
        let predicted = current_to_previous.transform_point(centroid);
        let mut best: Option<(f64, f64, usize)> = None;
        for &(fd, j) in &by_feature {
            let cd = predicted.distance(&previous_centroids[j]);
            if cd > cfg.correspondence_radius {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bfd, bcd, bj)) => {
                    (fd, cd, j) < (*bfd, *bcd, *bj)
                }
            };
            if better {
                best = Some((fd, cd, j));
            }
        }
        links.push(best.map(|(_, _, j)| j));
    }

    CorrespondenceMap { links }
}

/// A frame resident in the temporal window.
#[derive(Clone, Debug)]
pub struct WindowEntry {
    pub frame_index: usize,
    pub features: Vec<StructuralFeature>,
    pub centroids: Vec<Point3>,
    pub pose: Pose,
    /// Correspondences from this frame to the entry before it; `None` for
    /// the oldest resident entry.
    pub to_previous: Option<CorrespondenceMap>,
}

/// Ring buffer over the last `depth + 1` frames, newest at the back.
#[derive(Clone, Debug)]
pub struct FrameWindow {
    depth: usize,
    entries: VecDeque<WindowEntry>,
}

impl FrameWindow {
    pub fn new(depth: usize) -> Self {
        FrameWindow {
            depth,
            entries: VecDeque::with_capacity(depth + 1),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest(&self) -> Option<&WindowEntry> {
        self.entries.back()
    }

    pub fn entry(&self, idx: usize) -> &WindowEntry {
        &self.entries[idx]
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Advances the window by one frame, computing the correspondence map to
    /// the previous resident frame. Must be called in frame order by a
    /// single producer.
    pub fn push(
        &mut self,
        frame_index: usize,
        features: Vec<StructuralFeature>,
        centroids: Vec<Point3>,
        pose: Pose,
        cfg: &PoolingConfig,
    ) {
        let to_previous = self.entries.back().map(|prev| {
            let current_to_previous = pose.relative_to(&prev.pose);
            correspond(
                &features,
                &centroids,
                &prev.features,
                &prev.centroids,
                &current_to_previous,
                cfg,
            )
        });
        self.entries.push_back(WindowEntry {
            frame_index,
            features,
            centroids,
            pose,
            to_previous,
        });
        while self.entries.len() > self.depth + 1 {
            self.entries.pop_front();
        }
    }

    /// Follows correspondence links of segment `segment` of the newest frame
    /// back through the window. The chain breaks permanently at the first
    /// missing link, so its length is at most `depth`.
    pub fn chain(&self, segment: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let Some(mut entry_idx) = self.entries.len().checked_sub(1) else {
            return out;
        };
        let mut seg = segment;
        while out.len() < self.depth && entry_idx > 0 {
            let Some(map) = &self.entries[entry_idx].to_previous else {
                break;
            };
            match map.links.get(seg).copied().flatten() {
                Some(prev_seg) => {
                    entry_idx -= 1;
                    seg = prev_seg;
                    out.push((entry_idx, seg));
                }
                None => break,
            }
        }
        out
    }
}

/// Temporally pooled features for the newest frame of the window: per
/// segment, the softmax-weighted (by feature distance) average of its
/// chained correspondents' structural features. Segments with an empty
/// chain fall back to their own feature.
pub fn temporal_pool(window: &FrameWindow, smoothing: f64) -> Vec<Vec<f64>> {
    let Some(newest) = window.newest() else {
        return Vec::new();
    };
    (0..newest.features.len())
        .map(|i| {
            let feat = &newest.features[i];
            let chain = window.chain(i);
            if chain.is_empty() {
                return feat.values.clone();
            }
            let linked: Vec<&StructuralFeature> = chain
                .iter()
                .map(|&(entry, seg)| &window.entry(entry).features[seg])
                .collect();
            // Identical chain features collapse to the feature itself; this
            // keeps the repeatable-segment fixed point exact.
            if linked
                .iter()
                .all(|f| f.values.iter().zip(&feat.values).all(|(a, b)| a.to_bits() == b.to_bits()))
            {
                return feat.values.clone();
            }
            let dists: Vec<f64> = linked.iter().map(|f| feat.euclidean_distance(f)).collect();
            let weights = softmax_weights(&dists, smoothing);
            let mut acc = vec![0.0; feat.values.len()];
            for (f, w) in linked.iter().zip(&weights) {
                for (a, v) in acc.iter_mut().zip(&f.values) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect()
}

/// The softmax weight vectors used by [`temporal_pool`], per newest-frame
/// segment (empty for segments without a chain).
pub fn temporal_pool_weights(window: &FrameWindow, smoothing: f64) -> Vec<Vec<f64>> {
    let Some(newest) = window.newest() else {
        return Vec::new();
    };
    (0..newest.features.len())
        .map(|i| {
            let chain = window.chain(i);
            if chain.is_empty() {
                return Vec::new();
            }
            let dists: Vec<f64> = chain
                .iter()
                .map(|&(entry, seg)| {
                    newest.features[i].euclidean_distance(&window.entry(entry).features[seg])
                })
                .collect();
            softmax_weights(&dists, smoothing)
        })
        .collect()
}

/// Elementwise mean of the spatially and temporally pooled features.
pub fn combine_pooled(spatial: &[Vec<f64>], temporal: &[Vec<f64>]) -> Vec<Vec<f64>> {
    spatial
        .iter()
        .zip(temporal)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect())
        .collect()
}
