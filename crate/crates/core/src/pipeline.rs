//! Per-frame orchestration: segmentation, structural features, spatial and
//! temporal pooling, then second-order aggregation into per-mode global
//! descriptors.

use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::{aggregate, GlobalDescriptor};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{import_features, make_extractor, DescriptorExtractor, StructuralFeature};
use crate::geom::Pose;
use crate::ingest::{PointCloudFrame, Sequence};
use crate::segmentation::{segment_frame, SegmentSet};
use crate::spatiotemporal::{
    build_spatial_graph, combine_pooled, convex_hull, pairwise_hull_distances, spatial_pool,
    temporal_pool, FrameWindow,
};

/// Which complementary feature feeds the second-order aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DescriptorMode {
    /// The structural feature itself pairs with itself.
    Structural,
    /// Neighborhood-pooled feature.
    Spatial,
    /// Correspondence-chain-pooled feature.
    Temporal,
    /// Mean of the spatial and temporal poolings.
    Spatiotemporal,
}

impl DescriptorMode {
    pub const ALL: [DescriptorMode; 4] = [
        DescriptorMode::Structural,
        DescriptorMode::Spatial,
        DescriptorMode::Temporal,
        DescriptorMode::Spatiotemporal,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            DescriptorMode::Structural => "structural",
            DescriptorMode::Spatial => "spatial",
            DescriptorMode::Temporal => "temporal",
            DescriptorMode::Spatiotemporal => "spatiotemporal",
        }
    }
}

/// Wall-clock stage breakdown for one frame, milliseconds.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub segmentation_ms: f64,
    pub features_ms: f64,
    pub pooling_ms: f64,
    pub aggregation_ms: f64,
}

/// Everything the pipeline produces for one frame. Frames without segments
/// carry no descriptors.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub frame_index: usize,
    pub timestamp: f64,
    pub point_count: usize,
    pub segment_count: usize,
    pub descriptors: Vec<(DescriptorMode, GlobalDescriptor)>,
    pub timings: StageTimings,
}

impl FrameOutput {
    pub fn descriptor(&self, mode: DescriptorMode) -> Option<&GlobalDescriptor> {
        self.descriptors
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, g)| g)
    }

    pub fn is_skipped(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Streaming pipeline: feed frames in order, receive per-mode descriptors.
pub struct FramePipeline {
    config: PipelineConfig,
    extractor: Option<Box<dyn DescriptorExtractor>>,
    window: FrameWindow,
}

impl FramePipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let extractor = match config.features.extractor.as_str() {
            "import" => None,
            _ => Some(make_extractor(&config.features)?),
        };
        let window = FrameWindow::new(config.pooling.temporal_depth);
        Ok(FramePipeline {
            config,
            extractor,
            window,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Descriptor length: the squared structural feature dimension.
    pub fn descriptor_dim(&self) -> usize {
        let d = self
            .extractor
            .as_ref()
            .map(|e| e.dimension())
            .unwrap_or(crate::features::FEATURE_DIM);
        d * d
    }

    /// Drops all temporal context (e.g. between sequences).
    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Processes the next frame in sequence order.
    pub fn process_frame(
        &mut self,
        frame: &PointCloudFrame,
        pose: &Pose,
        modes: &[DescriptorMode],
    ) -> Result<FrameOutput> {
        let staged = prepare_frame(frame, &self.config, self.extractor.as_deref())?;
        finish_frame(staged, pose, &mut self.window, &self.config, modes)
    }
}

/// The per-frame work that is independent of the temporal window.
struct StagedFrame {
    frame_index: usize,
    timestamp: f64,
    point_count: usize,
    set: SegmentSet,
    features: Vec<StructuralFeature>,
    spatial: Vec<Vec<f64>>,
    timings: StageTimings,
}

fn prepare_frame(
    frame: &PointCloudFrame,
    config: &PipelineConfig,
    extractor: Option<&dyn DescriptorExtractor>,
) -> Result<StagedFrame> {
    let mut timings = StageTimings::default();

    let t0 = Instant::now();
    let set = if frame.is_empty() {
        SegmentSet {
            segments: Vec::new(),
            source_frame_index: frame.frame_index,
        }
    } else {
        segment_frame(frame, &config.segmentation)?
    };
    timings.segmentation_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let features: Vec<StructuralFeature> = match extractor {
        Some(ex) => set.segments.iter().map(|s| ex.extract(s)).collect(),
        None => {
            let pattern = config.features.import_pattern.as_ref().ok_or_else(|| {
                Error::Config("import extractor needs features.import_pattern".into())
            })?;
            let path = pattern.replace("{frame}", &frame.frame_index.to_string());
            if set.is_empty() {
                Vec::new()
            } else {
                import_features(std::path::Path::new(&path), set.len())?
            }
        }
    };
    timings.features_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let spatial = if set.is_empty() {
        Vec::new()
    } else {
        let hulls: Vec<_> = set.segments.iter().map(|s| convex_hull(s.points())).collect();
        let graph = build_spatial_graph(
            &pairwise_hull_distances(&hulls),
            config.pooling.graph_neighbors,
        );
        spatial_pool(&graph, &features, config.pooling.smoothing)
    };
    timings.pooling_ms = t2.elapsed().as_secs_f64() * 1e3;

    Ok(StagedFrame {
        frame_index: frame.frame_index,
        timestamp: frame.timestamp,
        point_count: frame.len(),
        set,
        features,
        spatial,
        timings,
    })
}

fn finish_frame(
    staged: StagedFrame,
    pose: &Pose,
    window: &mut FrameWindow,
    config: &PipelineConfig,
    modes: &[DescriptorMode],
) -> Result<FrameOutput> {
    let StagedFrame {
        frame_index,
        timestamp,
        point_count,
        set,
        features,
        spatial,
        mut timings,
    } = staged;

    let t0 = Instant::now();
    window.push(
        frame_index,
        features.clone(),
        set.centroids(),
        pose.clone(),
        &config.pooling,
    );
    let temporal = temporal_pool(window, config.pooling.smoothing);
    timings.pooling_ms += t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let mut descriptors = Vec::with_capacity(modes.len());
    if !set.is_empty() {
        let combined = combine_pooled(&spatial, &temporal);
        // f_b = f_a is the ablation baseline.
        let structural: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
        for &mode in modes {
            let complementary: &[Vec<f64>] = match mode {
                DescriptorMode::Structural => &structural,
                DescriptorMode::Spatial => &spatial,
                DescriptorMode::Temporal => &temporal,
                DescriptorMode::Spatiotemporal => &combined,
            };
            let g = aggregate(&features, complementary, &config.aggregation)?;
            descriptors.push((mode, g));
        }
    }
    timings.aggregation_ms = t1.elapsed().as_secs_f64() * 1e3;

    Ok(FrameOutput {
        frame_index,
        timestamp,
        point_count,
        segment_count: set.len(),
        descriptors,
        timings,
    })
}

/// A processed sequence: per-frame outputs in order plus the indices of
/// skipped (segment-free) frames.
pub struct SequenceRun {
    pub outputs: Vec<FrameOutput>,
    pub skipped: Vec<usize>,
}

/// Processes per-frame perturbed queries against clean temporal context:
/// each output is computed as if the perturbation hit exactly the query
/// sweep, with the window still holding the unperturbed recent past.
pub fn process_perturbed_queries<F>(
    seq: &Sequence,
    config: &PipelineConfig,
    modes: &[DescriptorMode],
    perturb: F,
) -> Result<SequenceRun>
where
    F: Fn(&PointCloudFrame) -> PointCloudFrame,
{
    config.validate()?;
    let extractor = match config.features.extractor.as_str() {
        "import" => None,
        _ => Some(make_extractor(&config.features)?),
    };
    let mut window = FrameWindow::new(config.pooling.temporal_depth);
    let mut outputs = Vec::with_capacity(seq.len());
    let mut skipped = Vec::new();
    for (frame, pose) in seq.frames.iter().zip(&seq.poses) {
        let perturbed = perturb(frame);
        let staged = prepare_frame(&perturbed, config, extractor.as_deref())?;
        let mut fork = window.clone();
        let out = finish_frame(staged, pose, &mut fork, config, modes)?;
        if out.is_skipped() {
            skipped.push(out.frame_index);
        }
        outputs.push(out);

        // Advance the clean history.
        let clean = prepare_frame(frame, config, extractor.as_deref())?;
        finish_frame(clean, pose, &mut window, config, &[])?;
    }
    Ok(SequenceRun { outputs, skipped })
}

/// Batch processing: the per-frame stages run frame-parallel, the temporal
/// window advances sequentially in frame order.
pub fn process_sequence(
    seq: &Sequence,
    config: &PipelineConfig,
    modes: &[DescriptorMode],
) -> Result<SequenceRun> {
    config.validate()?;
    let extractor = match config.features.extractor.as_str() {
        "import" => None,
        _ => Some(make_extractor(&config.features)?),
    };

    let staged: Result<Vec<StagedFrame>> = if config.runtime.workers == 1 {
        seq.frames
            .iter()
            .map(|f| prepare_frame(f, config, extractor.as_deref()))
            .collect()
    } else {
        let work = || {
            seq.frames
                .par_iter()
                .map(|f| prepare_frame(f, config, extractor.as_deref()))
                .collect()
        };
        if config.runtime.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.runtime.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(work)
        } else {
            work()
        }
    };

    let mut window = FrameWindow::new(config.pooling.temporal_depth);
    let mut outputs = Vec::with_capacity(seq.len());
    let mut skipped = Vec::new();
    for (staged, pose) in staged?.into_iter().zip(&seq.poses) {
        let out = finish_frame(staged, pose, &mut window, config, modes)?;
        if out.is_skipped() {
            skipped.push(out.frame_index);
        }
        outputs.push(out);
    }
    Ok(SequenceRun { outputs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{generate_synthetic_sequence, SyntheticSceneSpec};

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.synthetic = Some(SyntheticSceneSpec::static_scene(6, 5));
        cfg
    }

    #[test]
    fn descriptors_are_unit_norm_and_fixed_dim() {
        let cfg = small_config();
        let synth =
            generate_synthetic_sequence(cfg.dataset.synthetic.as_ref().unwrap(), 3).unwrap();
        let run = process_sequence(&synth.sequence, &cfg, &[DescriptorMode::Spatiotemporal])
            .unwrap();
        assert_eq!(run.outputs.len(), 5);
        for out in &run.outputs {
            let g = out.descriptor(DescriptorMode::Spatiotemporal).unwrap();
            assert_eq!(g.dim(), 64 * 64);
            assert!((g.norm() - 1.0).abs() < 1e-9);
            assert!(g.values.iter().all(|v| v.is_finite()));
        }
        assert!(run.skipped.is_empty());
    }

    #[test]
    fn batch_and_streaming_agree_bitwise() {
        let cfg = small_config();
        let synth =
            generate_synthetic_sequence(cfg.dataset.synthetic.as_ref().unwrap(), 4).unwrap();
        let batch = process_sequence(&synth.sequence, &cfg, &DescriptorMode::ALL).unwrap();

        let mut streaming = FramePipeline::new(cfg).unwrap();
        for (frame, pose) in synth.sequence.frames.iter().zip(&synth.sequence.poses) {
            let out = streaming
                .process_frame(frame, pose, &DescriptorMode::ALL)
                .unwrap();
            let batch_out = &batch.outputs[frame.frame_index];
            assert_eq!(out.segment_count, batch_out.segment_count);
            for (mode, g) in &out.descriptors {
                let gb = batch_out.descriptor(*mode).unwrap();
                assert_eq!(g.values.len(), gb.values.len());
                for (a, b) in g.values.iter().zip(&gb.values) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn empty_frames_are_skipped_but_advance_the_window() {
        let cfg = small_config();
        let synth =
            generate_synthetic_sequence(cfg.dataset.synthetic.as_ref().unwrap(), 5).unwrap();
        let mut pipeline = FramePipeline::new(cfg).unwrap();
        let empty = PointCloudFrame::new(Vec::new(), 0.05, 0);
        let out = pipeline
            .process_frame(&empty, &synth.sequence.poses[0], &[DescriptorMode::Spatiotemporal])
            .unwrap();
        assert!(out.is_skipped());
        assert_eq!(out.segment_count, 0);

        let out = pipeline
            .process_frame(
                &synth.sequence.frames[1],
                &synth.sequence.poses[1],
                &[DescriptorMode::Spatiotemporal],
            )
            .unwrap();
        assert!(!out.is_skipped());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = small_config();
        let synth =
            generate_synthetic_sequence(cfg.dataset.synthetic.as_ref().unwrap(), 6).unwrap();
        let a = process_sequence(&synth.sequence, &cfg, &[DescriptorMode::Spatiotemporal]).unwrap();
        cfg.runtime.workers = 2;
        let b = process_sequence(&synth.sequence, &cfg, &[DescriptorMode::Spatiotemporal]).unwrap();
        for (x, y) in a.outputs.iter().zip(&b.outputs) {
            let gx = x.descriptor(DescriptorMode::Spatiotemporal).unwrap();
            let gy = y.descriptor(DescriptorMode::Spatiotemporal).unwrap();
            for (u, v) in gx.values.iter().zip(&gy.values) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }
}
