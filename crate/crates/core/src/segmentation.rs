//! Ground removal and Euclidean clustering.
//!
//! A frame is first stripped of its dominant ground plane (RANSAC restricted
//! to near-horizontal planes, with a height-percentile fallback), then the
//! remaining points are grouped into connected components of the
//! fixed-radius neighbor graph. Components within the configured size bounds
//! become [`Segment`]s.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::ingest::PointCloudFrame;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Maximum Euclidean distance between neighboring points of one segment.
    pub cluster_distance: f64,
    /// Components with fewer points are discarded.
    pub min_points: usize,
    /// Components with more points are discarded.
    pub max_points: usize,
    /// Points beyond this range are dropped before clustering; sparse
    /// long-range returns produce unstable clusters.
    pub max_range: f64,
    pub ransac_iterations: usize,
    /// Plane inlier threshold in meters; also the thickness of the fallback
    /// ground slab.
    pub ransac_inlier_threshold: f64,
    /// Candidate planes must have a normal within this many degrees of +z.
    pub ransac_normal_max_angle_deg: f64,
    /// Minimum inlier fraction for a plane to count as ground.
    pub ransac_min_inlier_fraction: f64,
    pub ransac_seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            cluster_distance: 0.2,
            min_points: 100,
            max_points: 15000,
            max_range: 60.0,
            ransac_iterations: 200,
            ransac_inlier_threshold: 0.3,
            ransac_normal_max_angle_deg: 30.0,
            ransac_min_inlier_fraction: 0.15,
            ransac_seed: 0x9d2c_5680,
        }
    }
}

/// How the ground was identified for a frame.
#[derive(Clone, Debug)]
pub enum GroundModel {
    /// Fitted plane `n · p = offset` with unit normal oriented upward.
    Plane { normal: Vector3<f64>, offset: f64 },
    /// Percentile fallback: everything below this height is ground.
    HeightThreshold { z: f64 },
}

impl GroundModel {
    /// Ground elevation under the given horizontal position.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        match self {
            GroundModel::Plane { normal, offset } => {
                (offset - normal.x * x - normal.y * y) / normal.z
            }
            GroundModel::HeightThreshold { z } => *z,
        }
    }

    /// Signed height of a point above the ground surface.
    pub fn height_above(&self, p: &Point3) -> f64 {
        p.z - self.height_at(p.x, p.y)
    }
}

/// Result of ground removal: the surviving points plus the fitted model and
/// the indices of kept points in the input frame.
#[derive(Clone, Debug)]
pub struct GroundRemoval {
    pub frame: PointCloudFrame,
    pub model: GroundModel,
    pub kept_indices: Vec<usize>,
}

/// A Euclidean cluster. Points are stored in canonical (lexicographic)
/// order so every derived quantity is independent of input point order.
#[derive(Clone, Debug)]
pub struct Segment {
    points: Vec<Point3>,
    centroid: Point3,
    id: usize,
    height_above_ground: f64,
}

impl Segment {
    /// Builds a segment from points, canonicalizing their order. The ground
    /// model (when available) anchors the height feature; without one the
    /// ground is assumed at z = 0.
    pub fn new(mut points: Vec<Point3>, id: usize, ground: Option<&GroundModel>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter(
                "segment must hold at least one point".into(),
            ));
        }
        points.sort_by(|a, b| a.lex_cmp(b));
        let mut sum = Vector3::zeros();
        for p in &points {
            sum += p.to_vector();
        }
        let centroid = Point3::from_vector(&(sum / points.len() as f64));
        let height_above_ground = match ground {
            Some(g) => g.height_above(&centroid),
            None => centroid.z,
        };
        Ok(Segment {
            points,
            centroid,
            id,
            height_above_ground,
        })
    }

    pub fn from_points(points: Vec<Point3>, id: usize) -> Result<Self> {
        Segment::new(points, id, None)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn centroid(&self) -> Point3 {
        self.centroid
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn height_above_ground(&self) -> f64 {
        self.height_above_ground
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rebuilds the segment with a new id, keeping geometry intact.
    pub fn with_id(&self, id: usize) -> Segment {
        Segment {
            points: self.points.clone(),
            centroid: self.centroid,
            id,
            height_above_ground: self.height_above_ground,
        }
    }
}

/// The segments extracted from one frame.
#[derive(Clone, Debug, Default)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    pub source_frame_index: usize,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn centroids(&self) -> Vec<Point3> {
        self.segments.iter().map(|s| s.centroid()).collect()
    }
}

/// Classifies ground points and returns the surviving frame.
///
/// RANSAC plane candidates are sampled over a value-sorted view of the
/// points, so the outcome depends only on the point multiset, not on input
/// order. The winning plane is refined by two least-squares refits over its
/// inliers. When no near-horizontal plane reaches the inlier fraction, the
/// fallback removes the slab below the 5th height percentile plus the inlier
/// threshold.
pub fn remove_ground(frame: &PointCloudFrame, cfg: &SegmentationConfig) -> Result<GroundRemoval> {
    if frame.points.is_empty() {
        return Err(Error::Parameter(
            "cannot remove ground from an empty frame".into(),
        ));
    }

    let model = match fit_ground_plane(&frame.points, cfg) {
        Some((normal, offset)) => GroundModel::Plane { normal, offset },
        None => {
            let mut zs: Vec<f64> = frame.points.iter().map(|p| p.z).collect();
            zs.sort_by(f64::total_cmp);
            let idx = ((zs.len() - 1) as f64 * 0.05).round() as usize;
            GroundModel::HeightThreshold {
                z: zs[idx] + cfg.ransac_inlier_threshold,
            }
        }
    };

    let mut kept = Vec::new();
    let mut points = Vec::new();
    for (i, p) in frame.points.iter().enumerate() {
        let is_ground = match &model {
            GroundModel::Plane { normal, offset } => {
                (normal.dot(&p.to_vector()) - offset).abs() <= cfg.ransac_inlier_threshold
            }
            GroundModel::HeightThreshold { z } => p.z < *z,
        };
        if !is_ground {
            kept.push(i);
            points.push(*p);
        }
    }

    Ok(GroundRemoval {
        frame: PointCloudFrame::new(points, frame.timestamp, frame.frame_index),
        model,
        kept_indices: kept,
    })
}

/// RANSAC over near-horizontal planes. Returns `(unit normal, offset)` with
/// the normal oriented upward, or `None` when no candidate explains the
/// required inlier fraction.
fn fit_ground_plane(points: &[Point3], cfg: &SegmentationConfig) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    // Sample over a value-sorted index so results are permutation invariant.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].lex_cmp(&points[b]));

    let cos_max = cfg.ransac_normal_max_angle_deg.to_radians().cos();
    let min_inliers = ((points.len() as f64) * cfg.ransac_min_inlier_fraction).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac_seed);
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;

    for _ in 0..cfg.ransac_iterations {
        let a = points[order[rng.random_range(0..order.len())]].to_vector();
        let b = points[order[rng.random_range(0..order.len())]].to_vector();
        let c = points[order[rng.random_range(0..order.len())]].to_vector();
        let mut n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-12 {
            continue;
        }
        n /= norm;
        if n.z < 0.0 {
            n = -n;
        }
        if n.z < cos_max {
            continue;
        }
        let offset = n.dot(&a);
        let count = points
            .iter()
            .filter(|p| (n.dot(&p.to_vector()) - offset).abs() <= cfg.ransac_inlier_threshold)
            .count();
        if best.as_ref().map_or(true, |(_, _, c0)| count > *c0) {
            best = Some((n, offset, count));
        }
    }

    let (mut normal, mut offset, mut count) = best?;
    if count < min_inliers {
        return None;
    }

    // Consensus refinement: refit to inliers so the final plane does not
    // depend on which sample triple won.
    for _ in 0..2 {
        let inliers: Vec<&Point3> = points
            .iter()
            .filter(|p| (normal.dot(&p.to_vector()) - offset).abs() <= cfg.ransac_inlier_threshold)
            .collect();
        if inliers.len() < 3 {
            break;
        }
        let mut mean = Vector3::zeros();
        for p in &inliers {
            mean += p.to_vector();
        }
        mean /= inliers.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in &inliers {
            let d = p.to_vector() - mean;
            cov += d * d.transpose();
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut k = 0;
        for i in 1..3 {
            if eig.eigenvalues[i] < eig.eigenvalues[k] {
                k = i;
            }
        }
        let mut n = eig.eigenvectors.column(k).into_owned();
        if n.z < 0.0 {
            n = -n;
        }
        if n.z < cos_max {
            break;
        }
        normal = n;
        offset = n.dot(&mean);
        count = points
            .iter()
            .filter(|p| (normal.dot(&p.to_vector()) - offset).abs() <= cfg.ransac_inlier_threshold)
            .count();
    }

    (count >= min_inliers).then_some((normal, offset))
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            self.parent[x as usize] = self.parent[self.parent[x as usize] as usize];
            x = self.parent[x as usize];
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// Extracts Euclidean clusters from a ground-removed frame.
///
/// Connectivity is the exact fixed-radius graph (pairs at distance
/// ≤ `cluster_distance`); the voxel grid only limits which pairs are tested.
/// Surviving components keep their points, get a centroid and a
/// ground-relative height, and are assigned ids in discovery order
/// (ascending minimum point index).
pub fn extract_segments(
    frame: &PointCloudFrame,
    ground: &GroundModel,
    cfg: &SegmentationConfig,
) -> SegmentSet {
    let r = cfg.cluster_distance;
    let r2 = r * r;
    let in_range: Vec<usize> = (0..frame.points.len())
        .filter(|&i| frame.points[i].to_vector().norm() <= cfg.max_range)
        .collect();

    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    let cell = |p: &Point3| -> (i64, i64, i64) {
        (
            (p.x / r).floor() as i64,
            (p.y / r).floor() as i64,
            (p.z / r).floor() as i64,
        )
    };
    for (local, &orig) in in_range.iter().enumerate() {
        grid.entry(cell(&frame.points[orig]))
            .or_default()
            .push(local as u32);
    }

    let mut uf = UnionFind::new(in_range.len());
    // Own cell plus 13 forward neighbors covers every unordered cell pair of
    // the 27-cell stencil.
    const STENCIL: [(i64, i64, i64); 13] = [
        (1, 0, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 1, 0),
        (1, -1, 0),
        (1, 0, 1),
        (1, 0, -1),
        (0, 1, 1),
        (0, 1, -1),
        (1, 1, 1),
        (1, 1, -1),
        (1, -1, 1),
        (1, -1, -1),
    ];
    for (&key, bucket) in &grid {
        for (ai, &a) in bucket.iter().enumerate() {
            let pa = &frame.points[in_range[a as usize]];
            for &b in &bucket[ai + 1..] {
                if pa.distance_squared(&frame.points[in_range[b as usize]]) <= r2 {
                    uf.union(a, b);
                }
            }
        }
        for off in STENCIL {
            let nkey = (key.0 + off.0, key.1 + off.1, key.2 + off.2);
            if let Some(other) = grid.get(&nkey) {
                for &a in bucket {
                    let pa = &frame.points[in_range[a as usize]];
                    for &b in other {
                        if pa.distance_squared(&frame.points[in_range[b as usize]]) <= r2 {
                            uf.union(a, b);
                        }
                    }
                }
            }
        }
    }

    // Group by root; discovery order = ascending minimum original index.
    let mut components: HashMap<u32, Vec<usize>> = HashMap::new();
    for local in 0..in_range.len() {
        let root = uf.find(local as u32);
        components.entry(root).or_default().push(in_range[local]);
    }
    let mut comps: Vec<Vec<usize>> = components
        .into_values()
        .filter(|c| c.len() >= cfg.min_points && c.len() <= cfg.max_points)
        .collect();
    for c in &mut comps {
        c.sort_unstable();
    }
    comps.sort_by_key(|c| c[0]);

    let segments = comps
        .into_iter()
        .enumerate()
        .map(|(id, idxs)| {
            let pts: Vec<Point3> = idxs.iter().map(|&i| frame.points[i]).collect();
            Segment::new(pts, id, Some(ground)).expect("non-empty component")
        })
        .collect();

    SegmentSet {
        segments,
        source_frame_index: frame.frame_index,
    }
}

/// Ground removal followed by clustering.
pub fn segment_frame(frame: &PointCloudFrame, cfg: &SegmentationConfig) -> Result<SegmentSet> {
    let removal = remove_ground(frame, cfg)?;
    Ok(extract_segments(&removal.frame, &removal.model, cfg))
}
