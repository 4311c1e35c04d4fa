//! Basic geometric types shared across the pipeline: 3D points and rigid
//! transforms.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the rotation-matrix orthonormality and determinant checks.
pub const POSE_ORTHONORMALITY_TOL: f64 = 1e-6;

/// A point in 3D space, in meters. The frame (sensor or world) depends on
/// context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Total lexicographic order on (x, y, z). Used to canonicalize point
    /// lists so that downstream sums do not depend on input order.
    pub fn lex_cmp(&self, other: &Point3) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

/// A rigid transform mapping sensor-frame coordinates to world-frame
/// coordinates: `p_world = R * p_sensor + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` is orthonormal with
    /// determinant +1 within [`POSE_ORTHONORMALITY_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let defect = (gram - Matrix3::identity()).abs().max();
        if defect > POSE_ORTHONORMALITY_TOL {
            return Err(Error::Parameter(format!(
                "rotation is not orthonormal (max |R'R - I| = {defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > POSE_ORTHONORMALITY_TOL {
            return Err(Error::Parameter(format!(
                "rotation determinant is {det:.9}, expected +1"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Pure rotation about +z by `angle` radians plus a translation.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> Point3 {
        Point3::from_vector(&self.translation)
    }

    /// Composition `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Relative transform taking coordinates of `self`'s frame into
    /// `target`'s frame: `target⁻¹ ∘ self`.
    pub fn relative_to(&self, target: &Pose) -> Pose {
        target.inverse().compose(self)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.rotation * p.to_vector() + self.translation))
    }
}
