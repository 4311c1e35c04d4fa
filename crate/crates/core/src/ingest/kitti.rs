//! Readers and writers for the KITTI odometry layout: packed velodyne
//! binaries, 3x4 row-major pose files and per-frame times files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};
use crate::ingest::{default_timestamp, PointCloudFrame, Sequence};

/// Bytes per velodyne return: x, y, z, intensity as 32-bit little-endian
/// IEEE-754.
pub const POINT_RECORD_BYTES: usize = 16;

/// Decodes a packed velodyne buffer into points plus the intensity channel.
///
/// The intensity values are returned so a decode/encode round trip can
/// reproduce the input bytes exactly; the pipeline itself ignores them.
pub fn decode_frame_bytes(bytes: &[u8]) -> Result<(Vec<Point3>, Vec<f32>)> {
    if bytes.len() % POINT_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "velodyne buffer length {} is not a multiple of {}",
            bytes.len(),
            POINT_RECORD_BYTES
        )));
    }
    let n = bytes.len() / POINT_RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(POINT_RECORD_BYTES) {
        let x = f32::from_le_bytes(rec[0..4].try_into().unwrap());
        let y = f32::from_le_bytes(rec[4..8].try_into().unwrap());
        let z = f32::from_le_bytes(rec[8..12].try_into().unwrap());
        let i = f32::from_le_bytes(rec[12..16].try_into().unwrap());
        points.push(Point3::new(x as f64, y as f64, z as f64));
        intensities.push(i);
    }
    Ok((points, intensities))
}

/// Packs points back into the velodyne record layout. `intensities` must be
/// empty (zero-filled) or match the point count.
pub fn encode_frame_bytes(points: &[Point3], intensities: &[f32]) -> Result<Vec<u8>> {
    if !intensities.is_empty() && intensities.len() != points.len() {
        return Err(Error::Parameter(format!(
            "intensity count {} does not match point count {}",
            intensities.len(),
            points.len()
        )));
    }
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for (idx, p) in points.iter().enumerate() {
        let i = intensities.get(idx).copied().unwrap_or(0.0);
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        out.extend_from_slice(&(p.z as f32).to_le_bytes());
        out.extend_from_slice(&i.to_le_bytes());
    }
    Ok(out)
}

/// Reads one velodyne binary into a frame. Intensity is read and discarded;
/// the method uses geometry only. A zero-length file yields an empty frame,
/// which [`PointCloudFrame::is_valid`] reports as invalid.
pub fn read_kitti_frame(path: &Path, timestamp: f64, frame_index: usize) -> Result<PointCloudFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (points, _intensities) = decode_frame_bytes(&bytes)?;
    Ok(PointCloudFrame::new(points, timestamp, frame_index))
}

/// Writes a frame in the velodyne record layout (intensity zero-filled).
pub fn write_kitti_frame(path: &Path, frame: &PointCloudFrame) -> Result<()> {
    let bytes = encode_frame_bytes(&frame.points, &[])?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a KITTI pose file: one pose per line as 12 whitespace-separated
/// numbers forming a row-major 3x4 matrix, rotation in the 3x3 block and
/// translation in the last column.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::Format(format!("pose line {}: bad number {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::Format(format!(
                "pose line {}: expected 12 values, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        let rotation = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let translation = Vector3::new(vals[3], vals[7], vals[11]);
        poses.push(Pose::new(rotation, translation).map_err(|e| {
            Error::Format(format!("pose line {}: {e}", lineno + 1))
        })?);
    }
    Ok(poses)
}

/// Serializes poses in the same 12-numbers-per-line layout.
pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        let r = p.rotation();
        let t = p.translation();
        let row = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ];
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a times file: one float (seconds) per line.
pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        times.push(trimmed.parse::<f64>().map_err(|_| {
            Error::Format(format!("times line {}: bad number {trimmed:?}", lineno + 1))
        })?);
    }
    Ok(times)
}

pub fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    let mut out = String::new();
    for t in times {
        out.push_str(&format!("{t:.9e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A KITTI-layout sequence directory: `velodyne/NNNNNN.bin`, `poses.txt` and
/// optionally `times.txt`.
#[derive(Clone, Debug)]
pub struct KittiSequenceDir {
    pub root: PathBuf,
}

impl KittiSequenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        KittiSequenceDir { root: root.into() }
    }

    pub fn velodyne_path(&self, frame_index: usize) -> PathBuf {
        self.root.join("velodyne").join(format!("{frame_index:06}.bin"))
    }

    pub fn poses_path(&self) -> PathBuf {
        self.root.join("poses.txt")
    }

    pub fn times_path(&self) -> PathBuf {
        self.root.join("times.txt")
    }

    /// Loads up to `max_frames` frames (all when `None`). Timestamps come
    /// from `times.txt` when present, otherwise they are synthesized at the
    /// 10 Hz KITTI rate, which the 30 s retrieval exclusion depends on.
    /// Ground-truth positions are the pose translations.
    pub fn load(&self, max_frames: Option<usize>) -> Result<Sequence> {
        let poses = read_poses(&self.poses_path())?;
        let times = if self.times_path().exists() {
            Some(read_times(&self.times_path())?)
        } else {
            None
        };
        let mut count = poses.len();
        if let Some(times) = &times {
            count = count.min(times.len());
        }
        if let Some(m) = max_frames {
            count = count.min(m);
        }

        let mut frames = Vec::with_capacity(count);
        for i in 0..count {
            let ts = times
                .as_ref()
                .map(|t| t[i])
                .unwrap_or_else(|| default_timestamp(i));
            frames.push(read_kitti_frame(&self.velodyne_path(i), ts, i)?);
        }
        let poses: Vec<Pose> = poses.into_iter().take(count).collect();
        let positions = poses.iter().map(|p| p.position()).collect();
        Sequence::new(frames, poses, positions)
    }

    /// Writes a sequence out in this layout (intensities zero-filled).
    pub fn save(&self, seq: &Sequence) -> Result<()> {
        let vel_dir = self.root.join("velodyne");
        fs::create_dir_all(&vel_dir).map_err(|e| Error::io(&vel_dir, e))?;
        for frame in &seq.frames {
            write_kitti_frame(&self.velodyne_path(frame.frame_index), frame)?;
        }
        write_poses(&self.poses_path(), &seq.poses)?;
        let times: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
        write_times(&self.times_path(), &times)?;
        // flush a marker so partially written directories are detectable
        let done = self.root.join(".complete");
        let mut f = fs::File::create(&done).map_err(|e| Error::io(&done, e))?;
        f.write_all(b"ok\n").map_err(|e| Error::io(&done, e))?;
        Ok(())
    }
}
