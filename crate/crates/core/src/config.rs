//! The pipeline configuration: one structured TOML file covering dataset
//! selection and every stage's parameters. Unknown keys are rejected and all
//! numeric parameters are range-checked.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::ingest::kitti::KittiSequenceDir;
use crate::ingest::synthetic::{generate_synthetic_sequence, SyntheticSceneSpec, SyntheticSequence};
use crate::ingest::Sequence;
use crate::retrieval::RetrievalConfig;
use crate::segmentation::SegmentationConfig;
use crate::spatiotemporal::PoolingConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// `"synthetic"` or `"kitti"`.
    pub kind: String,
    /// KITTI-layout sequence directory (velodyne/, poses.txt, times.txt).
    pub root: Option<PathBuf>,
    /// Inline synthetic scene parameters.
    pub synthetic: Option<SyntheticSceneSpec>,
    /// Seed for the synthetic generator.
    pub seed: u64,
    /// Truncate the sequence to this many frames.
    pub max_frames: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: "synthetic".into(),
            root: None,
            synthetic: Some(SyntheticSceneSpec::default()),
            seed: 0,
            max_frames: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// A positive match within this distance of the query's ground truth is
    /// a true positive.
    pub tp_distance: f64,
    /// A positive match beyond this distance is a false positive; matches in
    /// between are excluded from precision/recall.
    pub fp_distance: f64,
    /// Occlusion sector widths (degrees) swept by the robustness harness.
    pub occlusion_angles: Vec<f64>,
    /// Whether the robustness harness runs the random z-rotation test.
    pub rotation_test: bool,
    /// Seed for the per-frame perturbation draws.
    pub perturbation_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            tp_distance: 3.0,
            fp_distance: 20.0,
            occlusion_angles: vec![0.0, 30.0, 45.0, 90.0, 135.0, 180.0],
            rotation_test: true,
            perturbation_seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    /// Worker threads for the frame-parallel stages; 0 uses all cores.
    pub workers: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig { workers: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub segmentation: SegmentationConfig,
    pub features: FeatureConfig,
    pub pooling: PoolingConfig,
    pub aggregation: AggregationConfig,
    pub retrieval: RetrievalConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
    pub runtime: RuntimeConfig,
}

/// A loaded dataset: the sequence plus the synthetic side information when
/// the generator produced it.
pub struct LoadedDataset {
    pub sequence: Sequence,
    pub synthetic: Option<SyntheticSequence>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a `section.key=value` override by patching the TOML document.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {assignment:?} is not of the form key=value"))
        })?;
        let mut doc: toml::Value = toml::Value::try_from(self.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut cursor = &mut doc;
        for key in &keys[..keys.len() - 1] {
            cursor = cursor
                .get_mut(key)
                .ok_or_else(|| Error::Config(format!("unknown config section {key:?}")))?;
        }
        let leaf = keys.last().unwrap();
        let parsed: toml::Value = value
            .trim()
            .parse::<toml::Value>()
            .unwrap_or_else(|_| toml::Value::String(value.trim().to_string()));
        match cursor {
            toml::Value::Table(t) => {
                t.insert(leaf.to_string(), parsed);
            }
            _ => return Err(Error::Config(format!("{path:?} is not a table"))),
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let c = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        match self.dataset.kind.as_str() {
            "synthetic" => {
                c(self.dataset.synthetic.is_some(), "synthetic dataset needs [dataset.synthetic]")?;
                if let Some(spec) = &self.dataset.synthetic {
                    spec.validate()?;
                }
            }
            "kitti" => c(self.dataset.root.is_some(), "kitti dataset needs dataset.root")?,
            other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
        let s = &self.segmentation;
        c(s.cluster_distance > 0.0, "cluster_distance must be positive")?;
        c(s.min_points >= 1, "min_points must be at least 1")?;
        c(s.max_points >= s.min_points, "max_points must be >= min_points")?;
        c(s.max_range > 0.0, "max_range must be positive")?;
        c(s.ransac_iterations >= 1, "ransac_iterations must be >= 1")?;
        c(s.ransac_inlier_threshold > 0.0, "ransac_inlier_threshold must be positive")?;
        c(
            (0.0..=90.0).contains(&s.ransac_normal_max_angle_deg),
            "ransac_normal_max_angle_deg must be in [0, 90]",
        )?;
        c(
            (0.0..=1.0).contains(&s.ransac_min_inlier_fraction),
            "ransac_min_inlier_fraction must be in [0, 1]",
        )?;
        let p = &self.pooling;
        c(p.graph_neighbors >= 1, "graph_neighbors must be >= 1")?;
        c(p.smoothing > 0.0, "smoothing must be positive")?;
        c(p.correspondence_radius > 0.0, "correspondence_radius must be positive")?;
        c(p.feature_knn >= 1, "feature_knn must be >= 1")?;
        c(self.aggregation.power > 0.0, "power must be positive")?;
        c(self.retrieval.exclusion_seconds >= 0.0, "exclusion_seconds must be >= 0")?;
        let e = &self.evaluation;
        c(e.tp_distance > 0.0, "tp_distance must be positive")?;
        c(e.fp_distance > e.tp_distance, "fp_distance must exceed tp_distance")?;
        for a in &e.occlusion_angles {
            c((0.0..=360.0).contains(a), "occlusion angles must be in [0, 360]")?;
        }
        match self.features.extractor.as_str() {
            "default" => {}
            "import" => c(
                self.features.import_pattern.is_some(),
                "import extractor needs features.import_pattern",
            )?,
            other => return Err(Error::Config(format!("unknown extractor {other:?}"))),
        }
        Ok(())
    }

    /// Loads the configured dataset.
    pub fn load_dataset(&self) -> Result<LoadedDataset> {
        match self.dataset.kind.as_str() {
            "synthetic" => {
                let spec = self
                    .dataset
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [dataset.synthetic]".into()))?;
                let mut synth = generate_synthetic_sequence(spec, self.dataset.seed)?;
                if let Some(m) = self.dataset.max_frames {
                    synth.sequence.frames.truncate(m);
                    synth.sequence.poses.truncate(m);
                    synth.sequence.ground_truth_positions.truncate(m);
                    synth.labels.truncate(m);
                }
                Ok(LoadedDataset {
                    sequence: synth.sequence.clone(),
                    synthetic: Some(synth),
                })
            }
            "kitti" => {
                let root = self
                    .dataset
                    .root
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing dataset.root".into()))?;
                let sequence = KittiSequenceDir::new(root).load(self.dataset.max_frames)?;
                Ok(LoadedDataset {
                    sequence,
                    synthetic: None,
                })
            }
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }

    /// Stable hash of the canonical serialized config, recorded in run
    /// manifests.
    pub fn content_hash(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_toml_string()?.as_bytes()))
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}
