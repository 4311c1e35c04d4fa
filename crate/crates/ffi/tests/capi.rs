//! Exercises the C ABI the way a foreign caller would: raw pointers, status
//! codes and preallocated output buffers.

use std::ffi::CString;

use placerec::config::PipelineConfig;
use placerec::ingest::synthetic::{generate_synthetic_sequence, SyntheticSceneSpec};
use placerec_ffi::*;

fn flatten_points(frame: &placerec::PointCloudFrame) -> Vec<f64> {
    frame
        .points
        .iter()
        .flat_map(|p| [p.x, p.y, p.z])
        .collect()
}

fn flatten_pose(pose: &placerec::Pose) -> [f64; 12] {
    let r = pose.rotation();
    let t = pose.translation();
    [
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
    ]
}

#[test]
fn full_session_over_the_c_surface() {
    let spec = SyntheticSceneSpec::static_scene(5, 4);
    let synth = generate_synthetic_sequence(&spec, 3).unwrap();

    unsafe {
        let pipeline = placerec_pipeline_new();
        assert!(!pipeline.is_null());
        let dim = placerec_pipeline_descriptor_len(pipeline);
        assert_eq!(dim, 64 * 64);

        let db = placerec_database_new(30.0);
        let mut descriptor = vec![0.0f64; dim];
        let mut has = false;

        for (frame, pose) in synth.sequence.frames.iter().zip(&synth.sequence.poses) {
            let points = flatten_points(frame);
            let pose_raw = flatten_pose(pose);
            let status = placerec_pipeline_process_frame(
                pipeline,
                points.as_ptr(),
                frame.points.len(),
                pose_raw.as_ptr(),
                frame.timestamp,
                frame.frame_index as u64,
                descriptor.as_mut_ptr(),
                &mut has,
            );
            assert_eq!(status, PlacerecStatus::Ok);
            assert!(has);
            let norm: f64 = descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);

            let position = [pose.translation().x, pose.translation().y, pose.translation().z];
            let status = placerec_database_insert(
                db,
                descriptor.as_ptr(),
                dim,
                frame.timestamp,
                frame.frame_index as u64,
                position.as_ptr(),
            );
            assert_eq!(status, PlacerecStatus::Ok);
        }
        assert_eq!(placerec_database_len(db), 4);

        // Query far in the future: the static scene must match itself.
        let mut result = PlacerecQueryResult {
            has_match: false,
            matched_frame_index: 0,
            distance: 0.0,
            positive: false,
        };
        let status = placerec_database_query(
            db,
            descriptor.as_ptr(),
            dim,
            1000.0,
            0.2,
            &mut result,
        );
        assert_eq!(status, PlacerecStatus::Ok);
        assert!(result.has_match);
        assert!(result.positive);
        assert!(result.distance < 0.05);

        // Within the exclusion window nothing is eligible.
        let status = placerec_database_query(db, descriptor.as_ptr(), dim, 0.3, 0.2, &mut result);
        assert_eq!(status, PlacerecStatus::Ok);
        assert!(!result.has_match);

        placerec_pipeline_free(pipeline);
        placerec_database_free(db);
    }
}

#[test]
fn database_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dpath = CString::new(dir.path().join("d.bin").to_str().unwrap()).unwrap();
    let ipath = CString::new(dir.path().join("i.txt").to_str().unwrap()).unwrap();

    unsafe {
        let db = placerec_database_new(30.0);
        let descriptor = {
            let mut v = vec![0.0; 4];
            v[0] = 1.0;
            v
        };
        let position = [1.0, 2.0, 0.0];
        assert_eq!(
            placerec_database_insert(db, descriptor.as_ptr(), 4, 0.5, 7, position.as_ptr()),
            PlacerecStatus::Ok
        );
        assert_eq!(
            placerec_database_save(db, dpath.as_ptr(), ipath.as_ptr(), 2),
            PlacerecStatus::Ok
        );

        let mut loaded: *mut PlacerecDatabase = std::ptr::null_mut();
        let mut dim = 0u32;
        assert_eq!(
            placerec_database_load(dpath.as_ptr(), ipath.as_ptr(), 30.0, &mut loaded, &mut dim),
            PlacerecStatus::Ok
        );
        assert_eq!(dim, 2);
        assert_eq!(placerec_database_len(loaded), 1);

        placerec_database_free(db);
        placerec_database_free(loaded);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let db = placerec_database_new(30.0);
        let descriptor = [1.0f64, 0.0];
        let position = [0.0f64, 0.0, 0.0];
        assert_eq!(
            placerec_database_insert(db, descriptor.as_ptr(), 2, 5.0, 0, position.as_ptr()),
            PlacerecStatus::Ok
        );
        // Out-of-order timestamp.
        let status =
            placerec_database_insert(db, descriptor.as_ptr(), 2, 4.0, 1, position.as_ptr());
        assert_eq!(status, PlacerecStatus::OutOfOrder);

        let needed = placerec_last_error_message(std::ptr::null_mut(), 0);
        assert!(needed > 0);
        let mut buf = vec![0i8; needed + 1];
        let written = placerec_last_error_message(buf.as_mut_ptr(), buf.len());
        assert_eq!(written, needed);
        let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy();
        assert!(msg.contains("ordering"), "{msg}");

        // NULL pointers are rejected, not dereferenced.
        let status = placerec_database_insert(db, std::ptr::null(), 2, 6.0, 2, position.as_ptr());
        assert_eq!(status, PlacerecStatus::InvalidArgument);

        placerec_database_free(db);
    }
}

#[test]
fn config_file_constructor_reports_bad_paths() {
    unsafe {
        let bogus = CString::new("/nonexistent/config.toml").unwrap();
        let mut out: *mut PlacerecPipeline = std::ptr::null_mut();
        let status = placerec_pipeline_new_from_config(bogus.as_ptr(), &mut out);
        assert_eq!(status, PlacerecStatus::Io);
        assert!(out.is_null());
    }
}

#[test]
fn config_file_constructor_accepts_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let cfg = PipelineConfig::default();
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut out: *mut PlacerecPipeline = std::ptr::null_mut();
        let status = placerec_pipeline_new_from_config(cpath.as_ptr(), &mut out);
        assert_eq!(status, PlacerecStatus::Ok);
        assert!(!out.is_null());
        placerec_pipeline_free(out);
    }
}
