//! Command implementations behind the `placerec` binary: describe a
//! sequence into a descriptor database, evaluate retrieval with ablations,
//! run the robustness sweeps, and emit synthetic sequences to disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    run_benchmark, run_robustness, sweep, EvalReport, QueryRecord, TopMatch,
};
use crate::ingest::kitti::KittiSequenceDir;
use crate::pipeline::{process_sequence, DescriptorMode};
use crate::retrieval::{DescriptorDatabase, RetrievalConfig};

pub const DESCRIPTOR_FILE: &str = "descriptors.bin";
pub const INDEX_FILE: &str = "index.txt";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_hash: String,
    dataset_seed: u64,
    ransac_seed: u64,
    perturbation_seed: u64,
    skipped_frames: Vec<usize>,
    outputs: Vec<String>,
    /// Full canonical configuration; rerunning with it reproduces every
    /// data output bitwise.
    config: String,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &PipelineConfig,
    skipped: &[usize],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format!("{:016x}", cfg.content_hash()?),
        dataset_seed: cfg.dataset.seed,
        ransac_seed: cfg.segmentation.ransac_seed,
        perturbation_seed: cfg.evaluation.perturbation_seed,
        skipped_frames: skipped.to_vec(),
        outputs: outputs
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect(),
        config: cfg.to_toml_string()?,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Builds per-frame descriptors for the whole configured dataset and
/// persists them with the sidecar index and a per-frame timing log.
/// Returns every written path.
pub fn cmd_describe(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let data = cfg.load_dataset()?;
    let run = process_sequence(&data.sequence, cfg, &[DescriptorMode::Spatiotemporal])?;

    let mut db = DescriptorDatabase::new(&cfg.retrieval);
    let mut timings = String::from(
        "frame_index,points,segments,segmentation_ms,features_ms,pooling_ms,aggregation_ms\n",
    );
    for out in &run.outputs {
        timings.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3}\n",
            out.frame_index,
            out.point_count,
            out.segment_count,
            out.timings.segmentation_ms,
            out.timings.features_ms,
            out.timings.pooling_ms,
            out.timings.aggregation_ms,
        ));
        if let Some(g) = out.descriptor(DescriptorMode::Spatiotemporal) {
            db.insert(crate::retrieval::DatabaseEntry {
                descriptor: g.clone(),
                timestamp: out.timestamp,
                position: data.sequence.ground_truth_positions[out.frame_index],
                frame_index: out.frame_index,
            })?;
        }
    }

    let d_path = dir.join(DESCRIPTOR_FILE);
    let i_path = dir.join(INDEX_FILE);
    db.save(&d_path, &i_path, crate::features::FEATURE_DIM as u32)?;
    let t_path = dir.join(TIMINGS_FILE);
    fs::write(&t_path, timings).map_err(|e| Error::io(&t_path, e))?;

    let mut outputs = vec![d_path, i_path, t_path];
    let m_path = write_manifest(&dir, "describe", cfg, &run.skipped, &outputs)?;
    outputs.push(m_path);
    Ok(outputs)
}

fn write_report_files(
    dir: &Path,
    mode_label: &str,
    report: &EvalReport,
    outputs: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut pr = String::from("tau,precision,recall\n");
    for p in &report.pr {
        pr.push_str(&format!("{:.12e},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
    }
    let pr_path = dir.join(format!("pr_{mode_label}.csv"));
    fs::write(&pr_path, pr).map_err(|e| Error::io(&pr_path, e))?;
    outputs.push(pr_path);

    let mut decisions = String::from("frame_index,x,y,label\n");
    for (idx, pos, label) in &report.decisions {
        decisions.push_str(&format!("{},{:.4},{:.4},{}\n", idx, pos.x, pos.y, label.code()));
    }
    let d_path = dir.join(format!("decisions_{mode_label}.csv"));
    fs::write(&d_path, decisions).map_err(|e| Error::io(&d_path, e))?;
    outputs.push(d_path);

    let c = &report.counts_at_f1max;
    let text = format!(
        "mode: {mode_label}\n\
         queries: {}\n\
         revisits: {}\n\
         f1_max: {:.6}\n\
         f1_max_threshold: {:.9}\n\
         extended_precision: {:.6}\n\
         precision_at_min_recall: {:.6}\n\
         max_recall_at_full_precision: {:.6}\n\
         counts_at_f1max: TP={} FP={} TN={} FN={} ignored={}\n",
        report.query_count,
        report.revisit_count,
        report.f1_max,
        report.f1_max_threshold,
        report.ep,
        report.p_r0,
        report.r_p100,
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        c.ignored,
    );
    let r_path = dir.join(format!("report_{mode_label}.txt"));
    fs::write(&r_path, text).map_err(|e| Error::io(&r_path, e))?;
    outputs.push(r_path);
    Ok(())
}

/// Replays a persisted database as an online query sequence.
fn records_from_database(db: &DescriptorDatabase, cfg: &PipelineConfig) -> Vec<QueryRecord> {
    let mut prefix = DescriptorDatabase::new(&cfg.retrieval);
    let mut records = Vec::with_capacity(db.len());
    for e in db.entries() {
        let revisit_exists =
            prefix.revisit_exists(e.timestamp, &e.position, cfg.evaluation.tp_distance);
        let r = prefix.query(&e.descriptor, e.timestamp, f64::INFINITY);
        let top1 = r.matched_index.map(|idx| {
            let m = prefix.entry_by_frame(idx).expect("matched entry exists");
            TopMatch {
                frame_index: idx,
                cosine_distance: r.distance.unwrap(),
                match_distance_m: m.position.distance(&e.position),
            }
        });
        records.push(QueryRecord {
            frame_index: e.frame_index,
            timestamp: e.timestamp,
            position: e.position,
            top1,
            revisit_exists,
        });
        prefix.insert(e.clone()).expect("entries are time-ordered");
    }
    records
}

/// Scores retrieval. With `database`, replays a persisted descriptor
/// database; otherwise builds descriptors from the configured dataset and
/// emits one report per ablation mode.
pub fn cmd_evaluate(cfg: &PipelineConfig, database: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let mut outputs = Vec::new();

    match database {
        Some(db_dir) => {
            let d_path = db_dir.join(DESCRIPTOR_FILE);
            let i_path = db_dir.join(INDEX_FILE);
            if !d_path.exists() || !i_path.exists() {
                return Err(Error::Parameter(format!(
                    "database not found: expected {} and {}",
                    d_path.display(),
                    i_path.display()
                )));
            }
            let (_dim, db) = DescriptorDatabase::load(
                &d_path,
                &i_path,
                &RetrievalConfig {
                    exclusion_seconds: cfg.retrieval.exclusion_seconds,
                },
            )?;
            let records = records_from_database(&db, cfg);
            let report = sweep(&records, &cfg.evaluation)?;
            write_report_files(&dir, "database", &report, &mut outputs)?;
        }
        None => {
            let data = cfg.load_dataset()?;
            let bench = run_benchmark(&data.sequence, cfg, &DescriptorMode::ALL)?;
            for (mode, report) in &bench.per_mode {
                write_report_files(&dir, mode.label(), report, &mut outputs)?;
            }
        }
    }

    let m_path = write_manifest(&dir, "evaluate", cfg, &[], &outputs)?;
    outputs.push(m_path);
    Ok(outputs)
}

/// Occlusion sweep plus the rotation test on the configured dataset.
pub fn cmd_robustness(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let data = cfg.load_dataset()?;
    let report = run_robustness(&data.sequence, cfg)?;

    let mut csv = String::from("theta_occ_deg,f1_max\n");
    for (theta, f1) in &report.occlusion {
        csv.push_str(&format!("{theta},{f1:.6}\n"));
    }
    let c_path = dir.join("robustness.csv");
    fs::write(&c_path, csv).map_err(|e| Error::io(&c_path, e))?;

    let mut text = format!("baseline_f1_max: {:.6}\n", report.baseline_f1);
    for (theta, f1) in &report.occlusion {
        text.push_str(&format!("occlusion {theta:>5.1} deg: f1_max {f1:.6}\n"));
    }
    match report.rotation_delta {
        Some(delta) => text.push_str(&format!("rotation_f1_delta: {delta:+.6}\n")),
        None => text.push_str("rotation test: disabled\n"),
    }
    let t_path = dir.join("robustness.txt");
    fs::write(&t_path, text).map_err(|e| Error::io(&t_path, e))?;

    let mut outputs = vec![c_path, t_path];
    let m_path = write_manifest(&dir, "robustness", cfg, &[], &outputs)?;
    outputs.push(m_path);
    Ok(outputs)
}

/// Generates the configured synthetic sequence and writes it to disk in the
/// KITTI layout (velodyne binaries, poses and times files).
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if cfg.dataset.kind != "synthetic" {
        return Err(Error::Config(
            "synth requires a synthetic dataset configuration".into(),
        ));
    }
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let data = cfg.load_dataset()?;
    let layout = KittiSequenceDir::new(&dir);
    layout.save(&data.sequence)?;
    let mut outputs = vec![layout.poses_path(), layout.times_path(), dir.join("velodyne")];
    let m_path = write_manifest(&dir, "synth", cfg, &[], &outputs)?;
    outputs.push(m_path);
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::SyntheticSceneSpec;

    fn test_config(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.synthetic = Some(SyntheticSceneSpec::static_scene(5, 4));
        cfg.output.dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn describe_writes_descriptors_and_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = test_config(tmp.path());
        let outputs = cmd_describe(&cfg).unwrap();
        for p in &outputs {
            assert!(p.exists(), "{}", p.display());
        }
        let (dim, db) = DescriptorDatabase::load(
            &tmp.path().join(DESCRIPTOR_FILE),
            &tmp.path().join(INDEX_FILE),
            &cfg.retrieval,
        )
        .unwrap();
        assert_eq!(dim as usize, crate::features::FEATURE_DIM);
        assert_eq!(db.len(), 4);
        for e in db.entries() {
            assert_eq!(e.descriptor.dim(), 64 * 64);
            assert!((e.descriptor.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn describe_reruns_bitwise_identically() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        let a = test_config(tmp_a.path());
        let b = test_config(tmp_b.path());
        cmd_describe(&a).unwrap();
        cmd_describe(&b).unwrap();
        let da = fs::read(tmp_a.path().join(DESCRIPTOR_FILE)).unwrap();
        let db = fs::read(tmp_b.path().join(DESCRIPTOR_FILE)).unwrap();
        assert_eq!(da, db);
        let ia = fs::read(tmp_a.path().join(INDEX_FILE)).unwrap();
        let ib = fs::read(tmp_b.path().join(INDEX_FILE)).unwrap();
        assert_eq!(ia, ib);
    }

    #[test]
    fn evaluate_rejects_missing_database() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = test_config(tmp.path());
        let err = cmd_evaluate(&cfg, Some(&tmp.path().join("nope"))).unwrap_err();
        assert!(err.to_string().contains("database not found"));
    }

    #[test]
    fn synth_writes_kitti_layout_that_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = test_config(tmp.path());
        cmd_synth(&cfg).unwrap();
        let seq = KittiSequenceDir::new(tmp.path()).load(None).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq.frames.iter().all(|f| f.is_valid()));
    }
}
