/* C ABI for the placerec LiDAR place-recognition pipeline. */

#ifndef PLACEREC_H
#define PLACEREC_H

/* Generated by cbindgen from placerec-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible entry point.
 */
typedef enum PlacerecStatus {
  PLACEREC_STATUS_OK = 0,
  PLACEREC_STATUS_INVALID_ARGUMENT = 1,
  PLACEREC_STATUS_IO = 2,
  PLACEREC_STATUS_FORMAT = 3,
  PLACEREC_STATUS_NUMERICAL = 4,
  PLACEREC_STATUS_OUT_OF_ORDER = 5,
  PLACEREC_STATUS_INTERNAL = 6,
} PlacerecStatus;

/*
 Opaque descriptor database handle.
 */
typedef struct PlacerecDatabase PlacerecDatabase;

/*
 Opaque streaming pipeline handle.
 */
typedef struct PlacerecPipeline PlacerecPipeline;

/*
 Top-1 query outcome.
 */
typedef struct PlacerecQueryResult {
  /*
   Whether any candidate survived the recency exclusion.
   */
  bool has_match;
  /*
   Frame index of the best match; meaningful iff `has_match`.
   */
  uint64_t matched_frame_index;
  /*
   Cosine distance of the best match; meaningful iff `has_match`.
   */
  double distance;
  /*
   Whether the distance cleared the decision threshold.
   */
  bool positive;
} PlacerecQueryResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the message of the most recent error on this thread into `buf`
 (NUL-terminated, truncated to `cap`). Returns the full message length in
 bytes, excluding the terminator.

 # Safety
 `buf` must point to `cap` writable bytes, or be NULL (then only the
 length is returned).
 */
uintptr_t placerec_last_error_message(char *buf, uintptr_t cap);

/*
 Creates a pipeline with default configuration. Never fails.
 */
struct PlacerecPipeline *placerec_pipeline_new(void);

/*
 Creates a pipeline from a TOML configuration file.

 # Safety
 `config_path` must be a NUL-terminated UTF-8 path and `out` a valid
 pointer to receive the handle.
 */
enum PlacerecStatus placerec_pipeline_new_from_config(const char *config_path,
                                                      struct PlacerecPipeline **out);

/*
 Number of doubles in one global descriptor produced by this pipeline.

 # Safety
 `pipeline` must be a live handle from a constructor.
 */
uintptr_t placerec_pipeline_descriptor_len(const struct PlacerecPipeline *pipeline);

/*
 Feeds the next frame (in sequence order) and writes its global
 descriptor.

 `points_xyz` holds `point_count * 3` doubles (x, y, z per point, sensor
 frame). `pose` holds 12 doubles: a row-major 3x4 rigid transform mapping
 sensor to world coordinates (rotation block then translation column, as
 in odometry pose files). `out_descriptor` receives
 `placerec_pipeline_descriptor_len` doubles when the frame yields a
 descriptor; `out_has_descriptor` reports whether it did (frames without
 segments are skipped but still advance temporal state).

 # Safety
 All pointers must be valid for the documented element counts.
 */
enum PlacerecStatus placerec_pipeline_process_frame(struct PlacerecPipeline *pipeline,
                                                    const double *points_xyz,
                                                    uintptr_t point_count,
                                                    const double *pose,
                                                    double timestamp,
                                                    uint64_t frame_index,
                                                    double *out_descriptor,
                                                    bool *out_has_descriptor);

/*
 Drops all temporal context (call between disjoint sequences).

 # Safety
 `pipeline` must be a live handle.
 */
void placerec_pipeline_reset(struct PlacerecPipeline *pipeline);

/*
 Releases a pipeline handle.

 # Safety
 `pipeline` must come from a constructor and not be freed twice.
 */
void placerec_pipeline_free(struct PlacerecPipeline *pipeline);

/*
 Creates a database with the given recency exclusion window (seconds).
 */
struct PlacerecDatabase *placerec_database_new(double exclusion_seconds);

/*
 Number of stored entries.

 # Safety
 `db` must be a live handle.
 */
uintptr_t placerec_database_len(const struct PlacerecDatabase *db);

/*
 Appends an entry; timestamps must be non-decreasing. `position` holds the
 ground-truth x, y, z used only by evaluation tooling.

 # Safety
 `descriptor` must hold `descriptor_len` doubles and `position` 3 doubles.
 */
enum PlacerecStatus placerec_database_insert(struct PlacerecDatabase *db,
                                             const double *descriptor,
                                             uintptr_t descriptor_len,
                                             double timestamp,
                                             uint64_t frame_index,
                                             const double *position);

/*
 Top-1 query among entries at least the exclusion window older than
 `timestamp`; the decision is positive iff the cosine distance falls below
 `threshold`.

 # Safety
 `descriptor` must hold `descriptor_len` doubles; `out` must be valid.
 */
enum PlacerecStatus placerec_database_query(const struct PlacerecDatabase *db,
                                            const double *descriptor,
                                            uintptr_t descriptor_len,
                                            double timestamp,
                                            double threshold,
                                            struct PlacerecQueryResult *out);

/*
 Persists the database: descriptors in the binary descriptor format plus
 the text sidecar index.

 # Safety
 Paths must be NUL-terminated UTF-8.
 */
enum PlacerecStatus placerec_database_save(const struct PlacerecDatabase *db,
                                           const char *descriptor_path,
                                           const char *index_path,
                                           uint32_t feature_dim);

/*
 Loads a database saved by [`placerec_database_save`]. Writes the handle
 to `out_db` and the stored feature dimension to `out_feature_dim` (may be
 NULL).

 # Safety
 Paths must be NUL-terminated UTF-8; `out_db` must be valid.
 */
enum PlacerecStatus placerec_database_load(const char *descriptor_path,
                                           const char *index_path,
                                           double exclusion_seconds,
                                           struct PlacerecDatabase **out_db,
                                           uint32_t *out_feature_dim);

/*
 Releases a database handle.

 # Safety
 `db` must come from a constructor and not be freed twice.
 */
void placerec_database_free(struct PlacerecDatabase *db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLACEREC_H */
