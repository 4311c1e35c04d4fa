//! C ABI for the place-recognition pipeline: opaque handles over the
//! streaming descriptor pipeline and the retrieval database, status codes
//! instead of Rust errors, and a thread-local last-error message.
//!
//! The generated header lives at `include/placerec.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use placerec::aggregation::GlobalDescriptor;
use placerec::config::PipelineConfig;
use placerec::geom::{Point3, Pose};
use placerec::ingest::PointCloudFrame;
use placerec::pipeline::{DescriptorMode, FramePipeline};
use placerec::retrieval::{DatabaseEntry, DescriptorDatabase, RetrievalConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlacerecStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Format = 3,
    Numerical = 4,
    OutOfOrder = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &placerec::Error) -> PlacerecStatus {
    use placerec::Error as E;
    match err {
        E::Io { .. } => PlacerecStatus::Io,
        E::Format(_) => PlacerecStatus::Format,
        E::Numerical(_) | E::DegenerateDescriptor => PlacerecStatus::Numerical,
        E::OutOfOrder { .. } => PlacerecStatus::OutOfOrder,
        E::Parameter(_) | E::Config(_) | E::EmptyFrame | E::NoRevisits => {
            PlacerecStatus::InvalidArgument
        }
    }
}

fn fail(err: &placerec::Error) -> PlacerecStatus {
    set_error(err.to_string());
    status_of(err)
}

/// Copies the message of the most recent error on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be NULL (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn placerec_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque streaming pipeline handle.
pub struct PlacerecPipeline {
    inner: FramePipeline,
}

/// Opaque descriptor database handle.
pub struct PlacerecDatabase {
    inner: DescriptorDatabase,
}

/// Top-1 query outcome.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PlacerecQueryResult {
    /// Whether any candidate survived the recency exclusion.
    pub has_match: bool,
    /// Frame index of the best match; meaningful iff `has_match`.
    pub matched_frame_index: u64,
    /// Cosine distance of the best match; meaningful iff `has_match`.
    pub distance: f64,
    /// Whether the distance cleared the decision threshold.
    pub positive: bool,
}

/// Creates a pipeline with default configuration. Never fails.
#[no_mangle]
pub extern "C" fn placerec_pipeline_new() -> *mut PlacerecPipeline {
    let pipeline = FramePipeline::new(PipelineConfig::default())
        .expect("default configuration is valid");
    Box::into_raw(Box::new(PlacerecPipeline { inner: pipeline }))
}

/// Creates a pipeline from a TOML configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated UTF-8 path and `out` a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn placerec_pipeline_new_from_config(
    config_path: *const c_char,
    out: *mut *mut PlacerecPipeline,
) -> PlacerecStatus {
    if config_path.is_null() || out.is_null() {
        set_error("config_path and out must be non-NULL");
        return PlacerecStatus::InvalidArgument;
    }
    let path = match CStr::from_ptr(config_path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("config_path is not valid UTF-8");
            return PlacerecStatus::InvalidArgument;
        }
    };
    match PipelineConfig::from_file(Path::new(path)).and_then(FramePipeline::new) {
        Ok(pipeline) => {
            *out = Box::into_raw(Box::new(PlacerecPipeline { inner: pipeline }));
            PlacerecStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Number of doubles in one global descriptor produced by this pipeline.
///
/// # Safety
/// `pipeline` must be a live handle from a constructor.
#[no_mangle]
pub unsafe extern "C" fn placerec_pipeline_descriptor_len(
    pipeline: *const PlacerecPipeline,
) -> usize {
    if pipeline.is_null() {
        return 0;
    }
    (*pipeline).inner.descriptor_dim()
}

/// Feeds the next frame (in sequence order) and writes its global
/// descriptor.
///
/// `points_xyz` holds `point_count * 3` doubles (x, y, z per point, sensor
/// frame). `pose` holds 12 doubles: a row-major 3x4 rigid transform mapping
/// sensor to world coordinates (rotation block then translation column, as
/// in odometry pose files). `out_descriptor` receives
/// `placerec_pipeline_descriptor_len` doubles when the frame yields a
/// descriptor; `out_has_descriptor` reports whether it did (frames without
/// segments are skipped but still advance temporal state).
///
/// # Safety
/// All pointers must be valid for the documented element counts.
#[no_mangle]
pub unsafe extern "C" fn placerec_pipeline_process_frame(
    pipeline: *mut PlacerecPipeline,
    points_xyz: *const f64,
    point_count: usize,
    pose: *const f64,
    timestamp: f64,
    frame_index: u64,
    out_descriptor: *mut f64,
    out_has_descriptor: *mut bool,
) -> PlacerecStatus {
    if pipeline.is_null()
        || pose.is_null()
        || out_descriptor.is_null()
        || out_has_descriptor.is_null()
        || (points_xyz.is_null() && point_count > 0)
    {
        set_error("NULL pointer argument");
        return PlacerecStatus::InvalidArgument;
    }
    let pipeline = &mut (*pipeline).inner;

    let raw = std::slice::from_raw_parts(pose, 12);
    let rotation = nalgebra::Matrix3::new(
        raw[0], raw[1], raw[2], raw[4], raw[5], raw[6], raw[8], raw[9], raw[10],
    );
    let translation = nalgebra::Vector3::new(raw[3], raw[7], raw[11]);
    let pose = match Pose::new(rotation, translation) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };

    let points: Vec<Point3> = std::slice::from_raw_parts(points_xyz, point_count * 3)
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect();
    let frame = PointCloudFrame::new(points, timestamp, frame_index as usize);

    let result = catch_unwind(AssertUnwindSafe(|| {
        pipeline.process_frame(&frame, &pose, &[DescriptorMode::Spatiotemporal])
    }));
    match result {
        Ok(Ok(output)) => match output.descriptor(DescriptorMode::Spatiotemporal) {
            Some(g) => {
                std::ptr::copy_nonoverlapping(g.values.as_ptr(), out_descriptor, g.values.len());
                *out_has_descriptor = true;
                PlacerecStatus::Ok
            }
            None => {
                *out_has_descriptor = false;
                PlacerecStatus::Ok
            }
        },
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("panic inside the pipeline");
            PlacerecStatus::Internal
        }
    }
}

/// Drops all temporal context (call between disjoint sequences).
///
/// # Safety
/// `pipeline` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn placerec_pipeline_reset(pipeline: *mut PlacerecPipeline) {
    if !pipeline.is_null() {
        (*pipeline).inner.reset();
    }
}

/// Releases a pipeline handle.
///
/// # Safety
/// `pipeline` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn placerec_pipeline_free(pipeline: *mut PlacerecPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Creates a database with the given recency exclusion window (seconds).
#[no_mangle]
pub extern "C" fn placerec_database_new(exclusion_seconds: f64) -> *mut PlacerecDatabase {
    let db = DescriptorDatabase::new(&RetrievalConfig { exclusion_seconds });
    Box::into_raw(Box::new(PlacerecDatabase { inner: db }))
}

/// Number of stored entries.
///
/// # Safety
/// `db` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_len(db: *const PlacerecDatabase) -> usize {
    if db.is_null() {
        0
    } else {
        (*db).inner.len()
    }
}

/// Appends an entry; timestamps must be non-decreasing. `position` holds the
/// ground-truth x, y, z used only by evaluation tooling.
///
/// # Safety
/// `descriptor` must hold `descriptor_len` doubles and `position` 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_insert(
    db: *mut PlacerecDatabase,
    descriptor: *const f64,
    descriptor_len: usize,
    timestamp: f64,
    frame_index: u64,
    position: *const f64,
) -> PlacerecStatus {
    if db.is_null() || descriptor.is_null() || position.is_null() || descriptor_len == 0 {
        set_error("NULL pointer or empty descriptor");
        return PlacerecStatus::InvalidArgument;
    }
    let values = std::slice::from_raw_parts(descriptor, descriptor_len).to_vec();
    let pos = std::slice::from_raw_parts(position, 3);
    let entry = DatabaseEntry {
        descriptor: GlobalDescriptor { values },
        timestamp,
        position: Point3::new(pos[0], pos[1], pos[2]),
        frame_index: frame_index as usize,
    };
    match (*db).inner.insert(entry) {
        Ok(()) => PlacerecStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Top-1 query among entries at least the exclusion window older than
/// `timestamp`; the decision is positive iff the cosine distance falls below
/// `threshold`.
///
/// # Safety
/// `descriptor` must hold `descriptor_len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_query(
    db: *const PlacerecDatabase,
    descriptor: *const f64,
    descriptor_len: usize,
    timestamp: f64,
    threshold: f64,
    out: *mut PlacerecQueryResult,
) -> PlacerecStatus {
    if db.is_null() || descriptor.is_null() || out.is_null() || descriptor_len == 0 {
        set_error("NULL pointer or empty descriptor");
        return PlacerecStatus::InvalidArgument;
    }
    let values = std::slice::from_raw_parts(descriptor, descriptor_len).to_vec();
    let query = GlobalDescriptor { values };
    let r = (*db).inner.query(&query, timestamp, threshold);
    *out = PlacerecQueryResult {
        has_match: r.matched_index.is_some(),
        matched_frame_index: r.matched_index.unwrap_or(0) as u64,
        distance: r.distance.unwrap_or(f64::NAN),
        positive: r.positive,
    };
    PlacerecStatus::Ok
}

/// Persists the database: descriptors in the binary descriptor format plus
/// the text sidecar index.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_save(
    db: *const PlacerecDatabase,
    descriptor_path: *const c_char,
    index_path: *const c_char,
    feature_dim: u32,
) -> PlacerecStatus {
    if db.is_null() || descriptor_path.is_null() || index_path.is_null() {
        set_error("NULL pointer argument");
        return PlacerecStatus::InvalidArgument;
    }
    let (Ok(dpath), Ok(ipath)) = (
        CStr::from_ptr(descriptor_path).to_str(),
        CStr::from_ptr(index_path).to_str(),
    ) else {
        set_error("paths must be valid UTF-8");
        return PlacerecStatus::InvalidArgument;
    };
    match (*db).inner.save(Path::new(dpath), Path::new(ipath), feature_dim) {
        Ok(()) => PlacerecStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Loads a database saved by [`placerec_database_save`]. Writes the handle
/// to `out_db` and the stored feature dimension to `out_feature_dim` (may be
/// NULL).
///
/// # Safety
/// Paths must be NUL-terminated UTF-8; `out_db` must be valid.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_load(
    descriptor_path: *const c_char,
    index_path: *const c_char,
    exclusion_seconds: f64,
    out_db: *mut *mut PlacerecDatabase,
    out_feature_dim: *mut u32,
) -> PlacerecStatus {
    if descriptor_path.is_null() || index_path.is_null() || out_db.is_null() {
        set_error("NULL pointer argument");
        return PlacerecStatus::InvalidArgument;
    }
    let (Ok(dpath), Ok(ipath)) = (
        CStr::from_ptr(descriptor_path).to_str(),
        CStr::from_ptr(index_path).to_str(),
    ) else {
        set_error("paths must be valid UTF-8");
        return PlacerecStatus::InvalidArgument;
    };
    match DescriptorDatabase::load(
        Path::new(dpath),
        Path::new(ipath),
        &RetrievalConfig { exclusion_seconds },
    ) {
        Ok((dim, db)) => {
            if !out_feature_dim.is_null() {
                *out_feature_dim = dim;
            }
            *out_db = Box::into_raw(Box::new(PlacerecDatabase { inner: db }));
            PlacerecStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Releases a database handle.
///
/// # Safety
/// `db` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn placerec_database_free(db: *mut PlacerecDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}
