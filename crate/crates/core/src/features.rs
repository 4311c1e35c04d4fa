//! Per-segment structural descriptors.
//!
//! The extractor interface is pluggable: the built-in extractor produces a
//! deterministic 64-dimensional rotation-invariant feature from segment
//! geometry, and externally computed features can be imported from text
//! files (one segment per row) when a learned descriptor is available.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::segmentation::Segment;

/// The structural feature dimension. The global descriptor dimension is its
/// square.
pub const FEATURE_DIM: usize = 64;

/// A per-segment structural feature, unit Euclidean length.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralFeature {
    pub values: Vec<f64>,
    /// Set when the segment covariance had rank < 2 and the shape features
    /// were zero-filled.
    pub degenerate: bool,
}

impl StructuralFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn euclidean_distance(&self, other: &StructuralFeature) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine_similarity(&self, other: &StructuralFeature) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// A structural feature extractor. Implementations must be deterministic,
/// invariant to point permutation (exactly) and to rotation about z (within
/// 1e-6 relative on asymmetric segments), and must emit unit-norm vectors;
/// [`conformance::check`] verifies these properties.
pub trait DescriptorExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn extract(&self, segment: &Segment) -> StructuralFeature;
}

/// Which extractor the pipeline uses.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// `"default"` for the built-in extractor, `"import"` to load features
    /// from per-frame files.
    pub extractor: String,
    /// Path pattern for imported features, with `{frame}` replaced by the
    /// frame index (e.g. `features/{frame}.txt`).
    pub import_pattern: Option<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            extractor: "default".into(),
            import_pattern: None,
        }
    }
}

// Histogram geometry: a 32x32x16 occupancy grid over the PCA-aligned,
// extent-normalized segment, pooled to 52 cells (16 + 16 + 8 paired slabs
// along the three axes plus 12 radial shells of cell centers).
const GRID_X: usize = 32;
const GRID_Y: usize = 32;
const GRID_Z: usize = 16;
const SLABS_X: usize = 16;
const SLABS_Y: usize = 16;
const SLABS_Z: usize = 8;
const SHELLS: usize = 12;
const HISTOGRAM_DIM: usize = SLABS_X + SLABS_Y + SLABS_Z + SHELLS;
const HISTOGRAM_GAIN: f64 = 1.0;

/// The built-in geometry extractor.
///
/// Feature layout (before unit normalization):
/// - `[0..7)`  eigenvalue shape features of the point covariance:
///   linearity, planarity, scattering, omnivariance, anisotropy,
///   eigenentropy, curvature change;
/// - `[7..10)` log-scale extents of the PCA-aligned bounding box, sorted
///   descending;
/// - `[10]`    log point count (scaled by the segment size cap);
/// - `[11]`    centroid height above the ground plane (scaled);
/// - `[12..64)` the 52-cell pooled occupancy histogram.
///
/// PCA axis-sign ambiguity is resolved by orienting each axis toward the
/// half-space containing more points; exact ties fall back to a positive
/// world-z (then x, then y) projection.
#[derive(Clone, Debug, Default)]
pub struct DefaultExtractor;

impl DescriptorExtractor for DefaultExtractor {
    fn name(&self) -> &str {
        "default"
    }

    fn dimension(&self) -> usize {
        FEATURE_DIM
    }

    fn extract(&self, segment: &Segment) -> StructuralFeature {
        extract_default(segment)
    }
}

/// Builds an extractor by config name.
pub fn make_extractor(cfg: &FeatureConfig) -> Result<Box<dyn DescriptorExtractor>> {
    match cfg.extractor.as_str() {
        "default" => Ok(Box::new(DefaultExtractor)),
        "import" => Err(Error::Config(
            "the import extractor is resolved per frame by the pipeline; \
             set feature files via import_pattern"
                .into(),
        )),
        other => Err(Error::Config(format!("unknown extractor {other:?}"))),
    }
}

pub fn extract_default(segment: &Segment) -> StructuralFeature {
    let pts = segment.points();
    let n = pts.len();
    let centroid = segment.centroid().to_vector();

    // Point covariance.
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.to_vector() - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut axes: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    // Sign convention: heavier half-space wins, world projection breaks ties.
    for axis in &mut axes {
        let mut pos = 0usize;
        let mut neg = 0usize;
        for p in pts {
            let t = (p.to_vector() - centroid).dot(axis);
            if t > 0.0 {
                pos += 1;
            } else if t < 0.0 {
                neg += 1;
            }
        }
        let flip = match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Equal => {
                if axis.z != 0.0 {
                    axis.z < 0.0
                } else if axis.x != 0.0 {
                    axis.x < 0.0
                } else {
                    axis.y < 0.0
                }
            }
        };
        if flip {
            *axis = -*axis;
        }
    }

    let degenerate = lambda[0] <= 1e-24 || lambda[1] <= 1e-12 * lambda[0];
    let shape = if degenerate {
        [0.0; 7]
    } else {
        let total = lambda[0] + lambda[1] + lambda[2];
        let e: Vec<f64> = lambda.iter().map(|l| l / total).collect();
        let entropy = -e
            .iter()
            .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
            .sum::<f64>();
        [
            (lambda[0] - lambda[1]) / lambda[0],
            (lambda[1] - lambda[2]) / lambda[0],
            lambda[2] / lambda[0],
            (e[0] * e[1] * e[2]).cbrt(),
            (lambda[0] - lambda[2]) / lambda[0],
            entropy,
            lambda[2] / total,
        ]
    };

    // PCA-frame coordinates, extents and normalized coordinates.
    let mut coords = Vec::with_capacity(n);
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in pts {
        let d = p.to_vector() - centroid;
        let c = [d.dot(&axes[0]), d.dot(&axes[1]), d.dot(&axes[2])];
        for k in 0..3 {
            min[k] = min[k].min(c[k]);
            max[k] = max[k].max(c[k]);
        }
        coords.push(c);
    }
    let mut extents = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
    extents.sort_by(|a, b| b.total_cmp(a));

    let half = [
        max[0].abs().max(min[0].abs()).max(1e-12),
        max[1].abs().max(min[1].abs()).max(1e-12),
        max[2].abs().max(min[2].abs()).max(1e-12),
    ];

    let bins = [GRID_X, GRID_Y, GRID_Z];
    let mut hist = [0.0f64; HISTOGRAM_DIM];
    let weight = 1.0 / n as f64;
    for c in &coords {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let t = (c[k] / half[k]).clamp(-1.0, 1.0);
            idx[k] = (((t + 1.0) * 0.5 * bins[k] as f64) as usize).min(bins[k] - 1);
        }
        hist[idx[0] / 2] += weight;
        hist[SLABS_X + idx[1] / 2] += weight;
        hist[SLABS_X + SLABS_Y + idx[2] / 2] += weight;
        // Radial shell of the occupied cell's center in normalized grid
        // coordinates; flip-invariant by construction.
        let mut r2 = 0.0;
        for k in 0..3 {
            let u = (idx[k] as f64 + 0.5) / bins[k] as f64 * 2.0 - 1.0;
            r2 += u * u;
        }
        let r = (r2.sqrt() / 3f64.sqrt()).min(1.0 - 1e-12);
        hist[SLABS_X + SLABS_Y + SLABS_Z + (r * SHELLS as f64) as usize] += weight;
    }

    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend_from_slice(&shape);
    for e in extents {
        values.push((1.0 + e).ln());
    }
    values.push((n as f64).ln() / (15000f64).ln());
    values.push(segment.height_above_ground() / 10.0);
    values.extend_from_slice(&hist);
    debug_assert_eq!(values.len(), FEATURE_DIM);

    // Center every component on a fixed reference so the vector is signed:
    // the elementwise maximum of outer products stays segment-selective for
    // crowded frames instead of converging to a common envelope. The
    // occupancy histogram is amplified so its 52 cells carry weight
    // comparable to the low-dimensional blocks.
    for (i, (v, c)) in values.iter_mut().zip(component_centers()).enumerate() {
        *v -= c;
        if i >= 12 {
            *v *= HISTOGRAM_GAIN;
        }
    }

    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }

    StructuralFeature { values, degenerate }
}

/// Fixed per-component centering constants: rough midpoints of each block's
/// natural range (shape ratios, log extents, log count, height, and the
/// uniform-occupancy levels of the histogram groups).
fn component_centers() -> impl Iterator<Item = f64> {
    let shape = std::iter::repeat(0.5).take(7);
    let extents = std::iter::repeat(0.7).take(3);
    let count = std::iter::once(0.7);
    let height = std::iter::once(0.05);
    let slabs_a0 = std::iter::repeat(1.0 / SLABS_X as f64).take(SLABS_X);
    let slabs_a1 = std::iter::repeat(1.0 / SLABS_Y as f64).take(SLABS_Y);
    let slabs_a2 = std::iter::repeat(1.0 / SLABS_Z as f64).take(SLABS_Z);
    let shells = std::iter::repeat(1.0 / SHELLS as f64).take(SHELLS);
    shape
        .chain(extents)
        .chain(count)
        .chain(height)
        .chain(slabs_a0)
        .chain(slabs_a1)
        .chain(slabs_a2)
        .chain(shells)
}

/// Loads externally computed features: `segment_count` rows of
/// whitespace-separated numbers, one row per segment in segment-id order.
/// Rows are renormalized to unit length.
pub fn import_features(path: &Path, segment_count: usize) -> Result<Vec<StructuralFeature>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::Format(format!("feature row {}: bad number {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "feature row {} has {} values, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.len() != segment_count {
        return Err(Error::Format(format!(
            "feature file holds {} rows but the frame has {} segments",
            rows.len(),
            segment_count
        )));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "feature row for segment {i} cannot be normalized (norm = {norm})"
                )));
            }
            for v in &mut row {
                *v /= norm;
            }
            Ok(StructuralFeature {
                values: row,
                degenerate: false,
            })
        })
        .collect()
}

/// Property checks every registered extractor must pass: determinism, exact
/// permutation invariance, z-rotation invariance within 1e-6 relative on
/// asymmetric blobs, and unit output norm within 1e-9.
pub mod conformance {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const ROTATION_TOL: f64 = 1e-6;
    pub const NORM_TOL: f64 = 1e-9;

    /// An asymmetric test blob with well-separated covariance eigenvalues.
    pub fn asymmetric_blob(seed: u64, n: usize) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // Skewed tri-axial distribution, denser on one side of each
                // axis so half-space counts are decisive.
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                let w: f64 = rng.random_range(-1.0..1.0);
                Point3::new(
                    2.0 * u + 0.8 * u.abs(),
                    1.2 * v + 0.5 * v.abs(),
                    0.6 * w + 0.3 * w.abs() + 1.5,
                )
            })
            .collect()
    }

    fn rotate_z(points: &[Point3], angle: f64) -> Vec<Point3> {
        let (s, c) = angle.sin_cos();
        points
            .iter()
            .map(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
            .collect()
    }

    /// Runs the suite, returning a description of the first violated
    /// property.
    pub fn check(extractor: &dyn DescriptorExtractor) -> std::result::Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        for case in 0..6 {
            let pts = asymmetric_blob(1000 + case, 600);
            let segment = Segment::from_points(pts.clone(), 0)
                .map_err(|e| format!("blob construction failed: {e}"))?;

            let f = extractor.extract(&segment);
            if f.dim() != extractor.dimension() {
                return Err(format!(
                    "dimension mismatch: got {}, declared {}",
                    f.dim(),
                    extractor.dimension()
                ));
            }

            // Determinism.
            let f2 = extractor.extract(&segment);
            if f.values.iter().zip(&f2.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("extractor is not deterministic (case {case})"));
            }

            // Unit norm.
            let norm = f.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(format!("output norm {norm} deviates from 1 (case {case})"));
            }

            // Exact permutation invariance.
            let mut shuffled = pts.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let fp = extractor.extract(&Segment::from_points(shuffled, 0).unwrap());
            if f.values.iter().zip(&fp.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("permutation changed the feature (case {case})"));
            }

            // z-rotation invariance.
            for _ in 0..3 {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let rotated = rotate_z(&pts, angle);
                let fr = extractor.extract(&Segment::from_points(rotated, 0).unwrap());
                let err = f.euclidean_distance(&fr);
                if err > ROTATION_TOL {
                    return Err(format!(
                        "rotation by {angle:.4} rad moved the feature by {err:.3e} (case {case})"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_extractor_passes_conformance() {
        conformance::check(&DefaultExtractor).unwrap();
    }

    #[test]
    fn shuffled_copy_yields_identical_feature() {
        let pts = conformance::asymmetric_blob(7, 300);
        let mut shuffled = pts.clone();
        shuffled.reverse();
        let a = extract_default(&Segment::from_points(pts, 0).unwrap());
        let b = extract_default(&Segment::from_points(shuffled, 0).unwrap());
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn quarter_turn_preserves_feature() {
        let pts = conformance::asymmetric_blob(9, 500);
        let rotated: Vec<Point3> = pts.iter().map(|p| Point3::new(-p.y, p.x, p.z)).collect();
        let a = extract_default(&Segment::from_points(pts, 0).unwrap());
        let b = extract_default(&Segment::from_points(rotated, 0).unwrap());
        assert!(a.euclidean_distance(&b) <= 1e-6);
    }

    /// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric
    /// method), independent of the iterative solver used by the extractor.
    fn analytic_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
        let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        if p1 == 0.0 {
            let mut d = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
            d.sort_by(|a, b| b.total_cmp(a));
            return d;
        }
        let q = m.trace() / 3.0;
        let p2 = (m[(0, 0)] - q).powi(2)
            + (m[(1, 1)] - q).powi(2)
            + (m[(2, 2)] - q).powi(2)
            + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (m - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn spherical_blob_is_scattering_dominant() {
        // Unit-radius spherical shell, 5000 points, fixed seed.
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Point3> = (0..5000)
            .map(|_| {
                let v = Vector3::new(
                    rand_distr::Distribution::sample(&normal, &mut rng),
                    rand_distr::Distribution::sample(&normal, &mut rng),
                    rand_distr::Distribution::sample(&normal, &mut rng),
                )
                .normalize();
                Point3::new(v.x, v.y, v.z + 2.0)
            })
            .collect();
        let segment = Segment::from_points(pts.clone(), 0).unwrap();
        let f = extract_default(&segment);

        // Independent oracle: covariance eigenvalues in closed form.
        let c = segment.centroid().to_vector();
        let mut cov = Matrix3::zeros();
        for p in segment.points() {
            let d = p.to_vector() - c;
            cov += d * d.transpose();
        }
        cov /= pts.len() as f64;
        let lam = analytic_eigenvalues(&cov);
        let linearity = (lam[0] - lam[1]) / lam[0];
        let planarity = (lam[1] - lam[2]) / lam[0];
        let scattering = lam[2] / lam[0];
        assert!(scattering > linearity && scattering > planarity);

        // The implementation agrees with the oracle: centering and
        // normalization are affine per component, so difference ratios of
        // the three shape features survive them.
        let impl_ratio = (f.values[2] - f.values[0]) / (f.values[1] - f.values[0]);
        let oracle_ratio = (scattering - linearity) / (planarity - linearity);
        assert!((impl_ratio - oracle_ratio).abs() < 1e-6);
        assert!(f.values[2] > f.values[0] && f.values[2] > f.values[1]);
    }

    #[test]
    fn degenerate_segments_are_flagged_and_finite() {
        // Collinear points: covariance rank 1.
        let pts: Vec<Point3> = (0..50)
            .map(|i| Point3::new(i as f64 * 0.01, 0.0, 1.0))
            .collect();
        let f = extract_default(&Segment::from_points(pts, 0).unwrap());
        assert!(f.degenerate);
        assert!(f.values.iter().all(|v| v.is_finite()));
        // Zero-filled shape features all land on the same centered value.
        for v in &f.values[1..7] {
            assert_eq!(*v, f.values[0]);
        }
    }

    #[test]
    fn distinct_primitives_are_distinguishable() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 2000;
        let size = 1.5;
        let box_pts: Vec<Point3> = (0..n)
            .map(|_| {
                let face = rng.random_range(0..3);
                let u = rng.random_range(-1.0f64..1.0);
                let v = rng.random_range(-1.0f64..1.0);
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let half = size / 2.0;
                match face {
                    0 => Point3::new(s * half, u * half * 0.7, v * half + 1.0),
                    1 => Point3::new(u * half, s * half * 0.7, v * half + 1.0),
                    _ => Point3::new(u * half, v * half * 0.7, s * half + 1.0),
                }
            })
            .collect();
        let cyl_pts: Vec<Point3> = (0..n)
            .map(|_| {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-0.75f64..0.75);
                Point3::new(0.5 * size * ang.cos(), 0.5 * size * ang.sin(), z + 1.0)
            })
            .collect();
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let ell_pts: Vec<Point3> = (0..n)
            .map(|_| {
                let v = Vector3::new(
                    rand_distr::Distribution::sample(&normal, &mut rng),
                    rand_distr::Distribution::sample(&normal, &mut rng),
                    rand_distr::Distribution::sample(&normal, &mut rng),
                )
                .normalize();
                Point3::new(0.8 * size * v.x, 0.6 * size * v.y, 0.5 * size * v.z + 1.0)
            })
            .collect();

        let fb = extract_default(&Segment::from_points(box_pts, 0).unwrap());
        let fc = extract_default(&Segment::from_points(cyl_pts, 1).unwrap());
        let fe = extract_default(&Segment::from_points(ell_pts, 2).unwrap());
        assert!(fb.cosine_similarity(&fc) < 0.99);
        assert!(fb.cosine_similarity(&fe) < 0.99);
        assert!(fc.cosine_similarity(&fe) < 0.99);
    }

    #[test]
    fn import_loads_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.txt");
        fs::write(&path, "1 0 0 0\n0 2 0 0\n").unwrap();
        let feats = import_features(&path, 2).unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0].values, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(feats[1].values, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn import_rejects_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.txt");
        fs::write(&path, "1 0\n0 1\n1 1\n").unwrap();
        assert!(matches!(import_features(&path, 2), Err(Error::Format(_))));
    }

    #[test]
    fn import_rejects_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.txt");
        fs::write(&path, "1 0\n0 0\n").unwrap();
        let err = import_features(&path, 2).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("segment 1"));
    }
}
