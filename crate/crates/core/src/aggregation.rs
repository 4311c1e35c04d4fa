//! Second-order aggregation of per-segment feature pairs into one
//! fixed-length global descriptor: elementwise-max pooling of outer
//! products, a Power-Euclidean spectral transform, then flattening and
//! normalization. Also defines the binary descriptor file format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StructuralFeature;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    /// Exponent applied to the singular values of the pooled matrix.
    #[serde(alias = "alpha")]
    pub power: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { power: 0.5 }
    }
}

/// Singular values at or below this magnitude are treated as exactly zero by
/// the Power-Euclidean transform (0^alpha := 0).
pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// The fixed-length global descriptor of one frame: the flattened,
/// unit-normalized transformed pooling matrix (d^2 values).
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f64>,
}

impl GlobalDescriptor {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine distance `1 - <a, b>`; in [0, 2] for unit-norm descriptors.
    pub fn cosine_distance(&self, other: &GlobalDescriptor) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        1.0 - dot
    }
}

impl AsRef<[f64]> for StructuralFeature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Second-order pooling: entry (x, y) is the maximum over segments of
/// `a[s][x] * b[s][y]`. For a single segment this is exactly the outer
/// product of its two features. Pooling an empty frame is an error the
/// caller decides how to handle.
pub fn second_order_pool<A, B>(features_a: &[A], features_b: &[B]) -> Result<DMatrix<f64>>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if features_a.is_empty() || features_a.len() != features_b.len() {
        return Err(Error::EmptyFrame);
    }
    let rows = features_a[0].as_ref().len();
    let cols = features_b[0].as_ref().len();
    let mut out = DMatrix::zeros(rows, cols);
    for x in 0..rows {
        for y in 0..cols {
            let mut acc = f64::NEG_INFINITY;
            for (fa, fb) in features_a.iter().zip(features_b) {
                let p = fa.as_ref()[x] * fb.as_ref()[y];
                if p > acc {
                    acc = p;
                }
            }
            // Canonicalize -0.0 so the result is bitwise independent of
            // segment order.
            out[(x, y)] = if acc == 0.0 { 0.0 } else { acc };
        }
    }
    Ok(out)
}

/// Power-Euclidean transform: decompose `M = U diag(s) V^T`, raise the
/// singular values to `power` (values at or below [`SPECTRUM_FLOOR`] stay
/// zero) and recompose.
pub fn power_euclidean(matrix: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "cannot transform a non-finite matrix".into(),
        ));
    }
    let mut svd = nalgebra::SVD::try_new(matrix.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "SVD did not converge on a {}x{} matrix: {:?}",
                matrix.nrows(),
                matrix.ncols(),
                matrix.as_slice()
            ))
        })?;
    for s in svd.singular_values.iter_mut() {
        *s = if *s <= SPECTRUM_FLOOR { 0.0 } else { s.powf(power) };
    }
    svd.recompose()
        .map_err(|e| Error::Numerical(format!("SVD recomposition failed: {e}")))
}

/// Row-major flatten plus unit normalization.
pub fn finalize(matrix: &DMatrix<f64>) -> Result<GlobalDescriptor> {
    let mut values = Vec::with_capacity(matrix.nrows() * matrix.ncols());
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            values.push(matrix[(r, c)]);
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateDescriptor);
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(GlobalDescriptor { values })
}

/// The full aggregation: pool, transform, finalize.
pub fn aggregate<A, B>(
    features_a: &[A],
    features_b: &[B],
    cfg: &AggregationConfig,
) -> Result<GlobalDescriptor>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    let pooled = second_order_pool(features_a, features_b)?;
    let transformed = power_euclidean(&pooled, cfg.power)?;
    finalize(&transformed)
}

// ---------------------------------------------------------------------------
// Descriptor file format: 8-byte magic, u32 descriptor dimension (d^2 per
// descriptor is implied by d), u64 count, then count * d^2 values as 64-bit
// little-endian IEEE-754 in row-major order.
// ---------------------------------------------------------------------------

pub const DESCRIPTOR_MAGIC: [u8; 8] = *b"PRDESC01";

pub fn write_descriptor_file(
    path: &Path,
    feature_dim: u32,
    descriptors: &[GlobalDescriptor],
) -> Result<()> {
    let d2 = (feature_dim as usize) * (feature_dim as usize);
    for g in descriptors {
        if g.dim() != d2 {
            return Err(Error::Parameter(format!(
                "descriptor has {} values, expected {d2}",
                g.dim()
            )));
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(8 + 4 + 8 + descriptors.len() * d2 * 8);
    buf.extend_from_slice(&DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&feature_dim.to_le_bytes());
    buf.extend_from_slice(&(descriptors.len() as u64).to_le_bytes());
    for g in descriptors {
        for v in &g.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor_file(path: &Path) -> Result<(u32, Vec<GlobalDescriptor>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || bytes[0..8] != DESCRIPTOR_MAGIC {
        return Err(Error::Format("not a descriptor file (bad magic)".into()));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let d2 = (d as usize) * (d as usize);
    let expected = 20 + count * d2 * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "descriptor file length {} does not match header (expected {expected})",
            bytes.len()
        )));
    }
    let mut descriptors = Vec::with_capacity(count);
    let mut off = 20;
    for _ in 0..count {
        let mut values = Vec::with_capacity(d2);
        for _ in 0..d2 {
            values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        descriptors.push(GlobalDescriptor { values });
    }
    Ok((d, descriptors))
}
