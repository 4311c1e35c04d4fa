//! Dataset access: KITTI odometry layout readers, frame/sequence containers
//! and the synthetic scene generator used for desk-scale testing.

pub mod kitti;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};

/// One LiDAR sweep: the accumulated points plus timing and ordering metadata.
#[derive(Clone, Debug)]
pub struct PointCloudFrame {
    pub points: Vec<Point3>,
    /// Seconds since sequence start; strictly increasing across a sequence.
    pub timestamp: f64,
    pub frame_index: usize,
}

impl PointCloudFrame {
    pub fn new(points: Vec<Point3>, timestamp: f64, frame_index: usize) -> Self {
        PointCloudFrame {
            points,
            timestamp,
            frame_index,
        }
    }

    /// A frame is valid if it holds at least one point.
    pub fn is_valid(&self) -> bool {
        !self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// An ordered traversal: frames, one pose per frame and the ground-truth
/// positions used by the evaluation thresholds.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<PointCloudFrame>,
    pub poses: Vec<Pose>,
    pub ground_truth_positions: Vec<Point3>,
}

impl Sequence {
    pub fn new(
        frames: Vec<PointCloudFrame>,
        poses: Vec<Pose>,
        ground_truth_positions: Vec<Point3>,
    ) -> Result<Self> {
        if frames.len() != poses.len() || frames.len() != ground_truth_positions.len() {
            return Err(Error::Parameter(format!(
                "sequence length mismatch: {} frames, {} poses, {} positions",
                frames.len(),
                poses.len(),
                ground_truth_positions.len()
            )));
        }
        let mut last = f64::NEG_INFINITY;
        for f in &frames {
            if f.timestamp <= last {
                return Err(Error::Parameter(format!(
                    "timestamps must be strictly increasing (frame {} at {} after {})",
                    f.frame_index, f.timestamp, last
                )));
            }
            last = f.timestamp;
        }
        Ok(Sequence {
            frames,
            poses,
            ground_truth_positions,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Synthesized timestamps for sequences without a times file: 10 Hz, the
/// KITTI LiDAR rate.
pub fn default_timestamp(frame_index: usize) -> f64 {
    0.1 * frame_index as f64
}
