//! Retrieval scoring: query labeling under the ground-truth distance rules,
//! the precision/recall sweep with its scalar summaries, the robustness
//! perturbations (random z-rotation, azimuth-sector occlusion) and the
//! end-to-end ablation benchmark.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EvaluationConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};
use crate::ingest::{PointCloudFrame, Sequence};
use crate::pipeline::{process_sequence, DescriptorMode};
use crate::retrieval::{DatabaseEntry, DescriptorDatabase};

/// Ground-truth classification of one query at one decision threshold.
/// Positive matches between the two distance thresholds are excluded from
/// precision/recall entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryLabel {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
    Ignored,
}

impl QueryLabel {
    pub fn code(&self) -> &'static str {
        match self {
            QueryLabel::TruePositive => "TP",
            QueryLabel::FalsePositive => "FP",
            QueryLabel::FalseNegative => "FN",
            QueryLabel::TrueNegative => "TN",
            QueryLabel::Ignored => "IGN",
        }
    }
}

/// The retrieval outcome of one query frame, independent of any decision
/// threshold.
#[derive(Clone, Debug)]
pub struct QueryRecord {
    pub frame_index: usize,
    pub timestamp: f64,
    pub position: Point3,
    pub top1: Option<TopMatch>,
    /// Whether an eligible database entry lay within the true-positive
    /// radius of the query position.
    pub revisit_exists: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct TopMatch {
    pub frame_index: usize,
    pub cosine_distance: f64,
    /// Ground-truth distance between query and matched entry, meters.
    pub match_distance_m: f64,
}

/// Labels a query at threshold `tau`: a positive decision is a true
/// positive within `tp_distance`, a false positive beyond `fp_distance` and
/// ignored in between; a negative decision is a false negative exactly when
/// a revisit existed.
pub fn label_query(record: &QueryRecord, tau: f64, cfg: &EvaluationConfig) -> QueryLabel {
    let positive = record
        .top1
        .as_ref()
        .map(|m| m.cosine_distance < tau)
        .unwrap_or(false);
    if positive {
        let m = record.top1.as_ref().unwrap();
        if m.match_distance_m <= cfg.tp_distance {
            QueryLabel::TruePositive
        } else if m.match_distance_m > cfg.fp_distance {
            QueryLabel::FalsePositive
        } else {
            QueryLabel::Ignored
        }
    } else if record.revisit_exists {
        QueryLabel::FalseNegative
    } else {
        QueryLabel::TrueNegative
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub ignored: usize,
}

impl LabelCounts {
    pub fn of(records: &[QueryRecord], tau: f64, cfg: &EvaluationConfig) -> LabelCounts {
        let mut c = LabelCounts::default();
        for r in records {
            match label_query(r, tau, cfg) {
                QueryLabel::TruePositive => c.tp += 1,
                QueryLabel::FalsePositive => c.fp += 1,
                QueryLabel::FalseNegative => c.fn_ += 1,
                QueryLabel::TrueNegative => c.tn += 1,
                QueryLabel::Ignored => c.ignored += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision().unwrap_or(0.0);
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The scored sweep over decision thresholds.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub f1_max: f64,
    pub f1_max_threshold: f64,
    /// Extended precision: mean of the precision at the strictest
    /// positive-producing threshold and the maximum recall at full
    /// precision.
    pub ep: f64,
    pub p_r0: f64,
    pub r_p100: f64,
    pub pr: Vec<PrPoint>,
    pub counts_at_f1max: LabelCounts,
    /// Per-query decisions at the F1-optimal threshold, for trajectory maps.
    pub decisions: Vec<(usize, Point3, QueryLabel)>,
    pub query_count: usize,
    pub revisit_count: usize,
}

/// Sweeps the decision threshold over every observed top-1 distance (plus a
/// catch-all sentinel) and computes the precision/recall curve, the maximum
/// F1 score and the extended precision.
pub fn sweep(records: &[QueryRecord], cfg: &EvaluationConfig) -> Result<EvalReport> {
    let revisit_count = records.iter().filter(|r| r.revisit_exists).count();
    if revisit_count == 0 {
        return Err(Error::NoRevisits);
    }

    let mut taus: Vec<f64> = records
        .iter()
        .filter_map(|r| r.top1.as_ref().map(|m| m.cosine_distance))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let sentinel = taus.last().copied().unwrap_or(0.0) + 1.0;
    taus.push(sentinel);

    let mut pr = Vec::with_capacity(taus.len());
    let mut f1_max = 0.0;
    let mut f1_max_threshold = taus[0];
    let mut counts_at_f1max = LabelCounts::of(records, taus[0], cfg);
    let mut p_r0: Option<f64> = None;
    let mut r_p100 = 0.0f64;

    for &tau in &taus {
        let counts = LabelCounts::of(records, tau, cfg);
        let precision = counts.precision();
        let recall = counts.recall();
        pr.push(PrPoint {
            threshold: tau,
            precision: precision.unwrap_or(1.0),
            recall,
        });
        if let Some(p) = precision {
            if p_r0.is_none() {
                // Strictest threshold producing a counted positive.
                p_r0 = Some(p);
            }
            if p == 1.0 {
                r_p100 = r_p100.max(recall);
            }
        }
        let f1 = counts.f1();
        if f1 > f1_max {
            f1_max = f1;
            f1_max_threshold = tau;
            counts_at_f1max = counts;
        }
    }

    let p_r0 = p_r0.unwrap_or(0.0);
    let ep = (p_r0 + r_p100) / 2.0;
    let decisions = records
        .iter()
        .map(|r| {
            (
                r.frame_index,
                r.position,
                label_query(r, f1_max_threshold, cfg),
            )
        })
        .collect();

    Ok(EvalReport {
        f1_max,
        f1_max_threshold,
        ep,
        p_r0,
        r_p100,
        pr,
        counts_at_f1max,
        decisions,
        query_count: records.len(),
        revisit_count,
    })
}

/// Rotates all points of a frame about the z axis; timestamp and index are
/// preserved.
pub fn rotate_frame(frame: &PointCloudFrame, angle: f64) -> PointCloudFrame {
    let (s, c) = angle.sin_cos();
    let points = frame
        .points
        .iter()
        .map(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
        .collect();
    PointCloudFrame::new(points, frame.timestamp, frame.frame_index)
}

/// Removes all points whose azimuth lies within the sector
/// `[azimuth_start, azimuth_start + theta_occ)` degrees (mod 360).
pub fn occlude_frame(frame: &PointCloudFrame, theta_occ: f64, azimuth_start: f64) -> PointCloudFrame {
    let points = frame
        .points
        .iter()
        .filter(|p| {
            let az = p.y.atan2(p.x).to_degrees().rem_euclid(360.0);
            (az - azimuth_start).rem_euclid(360.0) >= theta_occ
        })
        .copied()
        .collect();
    PointCloudFrame::new(points, frame.timestamp, frame.frame_index)
}

/// Builds the per-mode query records for a sequence: every frame queries the
/// database of strictly older frames, then its own descriptor (when the
/// frame produced one) is inserted.
pub fn collect_query_records(
    seq: &Sequence,
    config: &PipelineConfig,
    modes: &[DescriptorMode],
) -> Result<Vec<(DescriptorMode, Vec<QueryRecord>)>> {
    let run = process_sequence(seq, config, modes)?;
    Ok(modes
        .iter()
        .map(|&mode| {
            let records = replay_queries(&run.outputs, &run.outputs, seq, config, mode)?;
            Ok((mode, records))
        })
        .collect::<Result<Vec<_>>>()?)
}

/// Replays the online protocol with possibly distinct query and database
/// descriptor streams (equal for the plain benchmark; the occlusion harness
/// queries perturbed descriptors against the clean history).
fn replay_queries(
    query_outputs: &[crate::pipeline::FrameOutput],
    db_outputs: &[crate::pipeline::FrameOutput],
    seq: &Sequence,
    config: &PipelineConfig,
    mode: DescriptorMode,
) -> Result<Vec<QueryRecord>> {
    assert_eq!(query_outputs.len(), db_outputs.len());
    let mut db = DescriptorDatabase::new(&config.retrieval);
    let mut records = Vec::with_capacity(query_outputs.len());
    for (query, db_side) in query_outputs.iter().zip(db_outputs) {
        let position = seq.ground_truth_positions[query.frame_index];
        let revisit_exists =
            db.revisit_exists(query.timestamp, &position, config.evaluation.tp_distance);
        let top1 = query.descriptor(mode).and_then(|g| {
            let r = db.query(g, query.timestamp, f64::INFINITY);
            r.matched_index.map(|idx| {
                let entry = db.entry_by_frame(idx).expect("matched entry exists");
                TopMatch {
                    frame_index: idx,
                    cosine_distance: r.distance.unwrap(),
                    match_distance_m: entry.position.distance(&position),
                }
            })
        });
        records.push(QueryRecord {
            frame_index: query.frame_index,
            timestamp: query.timestamp,
            position,
            top1,
            revisit_exists,
        });
        if let Some(g) = db_side.descriptor(mode) {
            db.insert(DatabaseEntry {
                descriptor: g.clone(),
                timestamp: db_side.timestamp,
                position,
                frame_index: db_side.frame_index,
            })?;
        }
    }
    Ok(records)
}

/// One ablation benchmark run: per requested mode, the full pipeline plus
/// retrieval and the scored sweep.
pub struct BenchmarkReport {
    pub per_mode: Vec<(DescriptorMode, EvalReport)>,
    pub records: Vec<(DescriptorMode, Vec<QueryRecord>)>,
}

impl BenchmarkReport {
    pub fn report(&self, mode: DescriptorMode) -> Option<&EvalReport> {
        self.per_mode
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, r)| r)
    }
}

pub fn run_benchmark(
    seq: &Sequence,
    config: &PipelineConfig,
    modes: &[DescriptorMode],
) -> Result<BenchmarkReport> {
    let records = collect_query_records(seq, config, modes)?;
    let mut per_mode = Vec::with_capacity(records.len());
    for (mode, recs) in &records {
        per_mode.push((*mode, sweep(recs, &config.evaluation)?));
    }
    Ok(BenchmarkReport { per_mode, records })
}

fn perturbation_angle(seed: u64, frame_index: usize, stream: u64) -> f64 {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream);
    rng.random_range(0.0..360.0)
}

/// Rotates every frame about its sensor z axis by an independent random
/// angle, adjusting the pose so the simulated viewpoint change stays
/// geometrically consistent (a yawed sensor reports a yawed pose).
pub fn rotated_sequence(seq: &Sequence, seed: u64) -> Sequence {
    let mut frames = Vec::with_capacity(seq.len());
    let mut poses = Vec::with_capacity(seq.len());
    for (frame, pose) in seq.frames.iter().zip(&seq.poses) {
        let angle = perturbation_angle(seed, frame.frame_index, 0x0707);
        let angle_rad = angle.to_radians();
        frames.push(rotate_frame(frame, angle_rad));
        // p_world = T R^T (R p): compensate the cloud rotation.
        let (s, c) = angle_rad.sin_cos();
        let rz_t = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        let rotation = pose.rotation() * rz_t;
        poses.push(Pose::new(rotation, *pose.translation()).expect("rotation stays orthonormal"));
    }
    Sequence {
        frames,
        poses,
        ground_truth_positions: seq.ground_truth_positions.clone(),
    }
}

/// Frames for which one randomly drawn occluder persists: nearby blocking
/// objects obstruct the sensor for seconds at a time, not single sweeps.
pub const OCCLUSION_EPISODE_FRAMES: usize = 12;

/// Removes a `theta_occ`-degree sector from every frame. The sector azimuth
/// is redrawn every [`OCCLUSION_EPISODE_FRAMES`] frames and held in between.
pub fn occluded_sequence(seq: &Sequence, theta_occ: f64, seed: u64) -> Sequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let episode = f.frame_index / OCCLUSION_EPISODE_FRAMES;
            let start = perturbation_angle(seed, episode, 0x0CC);
            occlude_frame(f, theta_occ, start)
        })
        .collect();
    Sequence {
        frames,
        poses: seq.poses.clone(),
        ground_truth_positions: seq.ground_truth_positions.clone(),
    }
}

/// Robustness harness results.
pub struct RobustnessReport {
    pub baseline_f1: f64,
    /// (occlusion angle degrees, F1max) rows.
    pub occlusion: Vec<(f64, f64)>,
    /// F1max(rotated) - F1max(baseline), when the rotation test ran.
    pub rotation_delta: Option<f64>,
}

pub fn run_robustness(seq: &Sequence, config: &PipelineConfig) -> Result<RobustnessReport> {
    let mode = DescriptorMode::Spatiotemporal;
    let clean = process_sequence(seq, config, &[mode])?;
    let baseline_records = replay_queries(&clean.outputs, &clean.outputs, seq, config, mode)?;
    let baseline_f1 = sweep(&baseline_records, &config.evaluation)?.f1_max;

    // Occlusion simulates a sensor whose view is blocked for the query
    // sweep: the occluded scan is described against the clean recent past
    // and matched against the clean history.
    let seed = config.evaluation.perturbation_seed;
    let mut occlusion = Vec::new();
    for &theta in &config.evaluation.occlusion_angles {
        let run = crate::pipeline::process_perturbed_queries(seq, config, &[mode], |frame| {
            let start = perturbation_angle(seed, frame.frame_index, 0x0CC);
            occlude_frame(frame, theta, start)
        })?;
        let records = replay_queries(&run.outputs, &clean.outputs, seq, config, mode)?;
        occlusion.push((theta, sweep(&records, &config.evaluation)?.f1_max));
    }

    let rotation_delta = if config.evaluation.rotation_test {
        let rotated = rotated_sequence(seq, seed);
        let run = process_sequence(&rotated, config, &[mode])?;
        let records = replay_queries(&run.outputs, &clean.outputs, seq, config, mode)?;
        Some(sweep(&records, &config.evaluation)?.f1_max - baseline_f1)
    } else {
        None
    };

    Ok(RobustnessReport {
        baseline_f1,
        occlusion,
        rotation_delta,
    })
}
