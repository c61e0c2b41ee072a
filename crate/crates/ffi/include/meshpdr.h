#ifndef MESHPDR_H
#define MESHPDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MeshpdrMode {
  MESHPDR_MODE_SEQ = 0,
  MESHPDR_MODE_SHARED = 1,
  MESHPDR_MODE_MW = 2,
} MeshpdrMode;

typedef enum MeshpdrStatus {
  MESHPDR_STATUS_OK = 0,
  MESHPDR_STATUS_NULL_ARGUMENT = 1,
  MESHPDR_STATUS_INVALID_ARGUMENT = 2,
  MESHPDR_STATUS_IMAGE_ERROR = 3,
  MESHPDR_STATUS_REFINE_ERROR = 4,
  MESHPDR_STATUS_PROTOCOL_ERROR = 5,
  MESHPDR_STATUS_AUDIT_FAILED = 6,
  MESHPDR_STATUS_BUFFER_TOO_SMALL = 7,
  MESHPDR_STATUS_PANIC = 8,
} MeshpdrStatus;

/**
 * Run configuration under construction.
 */
typedef struct MeshpdrConfig MeshpdrConfig;

/**
 * A finished run: report and final mesh.
 */
typedef struct MeshpdrResult MeshpdrResult;

/**
 * Headline numbers of a finished run.
 */
typedef struct MeshpdrCounts {
  uint64_t vertices;
  uint64_t elements;
  uint64_t kept_elements;
  uint64_t insertions;
  double wall_secs;
  /**
   * Mean wait-for-work share of wall time over the refining ranks.
   */
  double idle_fraction;
  double sliver_fraction;
  /**
   * 1 when every audit passed.
   */
  uint8_t audits_passed;
} MeshpdrCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *meshpdr_version(void);

/**
 * Copies the calling thread's last error message, NUL-terminated, into
 * `buf`. Returns the message length without the NUL, or 0 if there is none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t meshpdr_last_error(char *buf, size_t len);

/**
 * New configuration with defaults: sequential mode, `sphere:r=16,dims=64`,
 * h = 4, radius-edge bound 2, octree depth 2.
 */
struct MeshpdrConfig *meshpdr_config_new(void);

/**
 * # Safety
 * `cfg` must be null or come from [`meshpdr_config_new`] and not be freed yet.
 */
void meshpdr_config_free(struct MeshpdrConfig *cfg);

/**
 * Uses a synthetic phantom such as `sphere:r=16,dims=64`.
 *
 * # Safety
 * `cfg` must be a live config handle and `spec` a NUL-terminated string.
 */
enum MeshpdrStatus meshpdr_config_set_phantom(struct MeshpdrConfig *cfg, const char *spec);

/**
 * Reads the input from a labeled image file when the run starts.
 *
 * # Safety
 * `cfg` must be a live config handle and `path` a NUL-terminated string.
 */
enum MeshpdrStatus meshpdr_config_set_image_path(struct MeshpdrConfig *cfg, const char *path);

/**
 * `mode` is a [`MeshpdrMode`] value.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum MeshpdrStatus meshpdr_config_set_mode(struct MeshpdrConfig *cfg, uint32_t mode);

/**
 * Element size bound `h` and radius-edge bound `rho` (at least 2).
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum MeshpdrStatus meshpdr_config_set_sizing(struct MeshpdrConfig *cfg, double h, double rho);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum MeshpdrStatus meshpdr_config_set_octree_depth(struct MeshpdrConfig *cfg, uint32_t depth);

/**
 * Worker ranks (mw mode), refinement threads per rank and pack helper
 * threads (0 for one per core). Ranks run as threads of the calling process.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum MeshpdrStatus meshpdr_config_set_parallelism(struct MeshpdrConfig *cfg,
                                                  uint32_t ranks,
                                                  uint32_t threads_per_rank,
                                                  uint32_t pack_threads);

/**
 * Phantom seed and the per-loop wall-time cap in seconds.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum MeshpdrStatus meshpdr_config_set_limits(struct MeshpdrConfig *cfg,
                                             uint64_t seed,
                                             double max_wall_secs);

/**
 * Runs the configured pipeline. On success `*out` receives a result
 * handle, also when an audit failed; the status then is `AuditFailed`.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for one pointer write.
 */
enum MeshpdrStatus meshpdr_run(const struct MeshpdrConfig *cfg, struct MeshpdrResult **out);

/**
 * # Safety
 * `res` must be null or come from [`meshpdr_run`] and not be freed yet.
 */
void meshpdr_result_free(struct MeshpdrResult *res);

/**
 * # Safety
 * `res` must be a live result handle and `counts` valid for one write.
 */
enum MeshpdrStatus meshpdr_result_counts(const struct MeshpdrResult *res,
                                         struct MeshpdrCounts *counts);

/**
 * The run report as JSON (not NUL-terminated).
 *
 * # Safety
 * `res` must be a live result handle, `buf` null or valid for `len` bytes,
 * `needed` null or valid for one write.
 */
enum MeshpdrStatus meshpdr_result_report_json(const struct MeshpdrResult *res,
                                              uint8_t *buf,
                                              size_t len,
                                              size_t *needed);

/**
 * Canonical pack of the final mesh, the same bytes `run --dump-mesh` writes.
 *
 * # Safety
 * As for [`meshpdr_result_report_json`].
 */
enum MeshpdrStatus meshpdr_result_dump(const struct MeshpdrResult *res,
                                       uint8_t *buf,
                                       size_t len,
                                       size_t *needed);

/**
 * Audits a mesh dump: adjacency, Delaunay (all pairs when `brute` is
 * nonzero, interior facets otherwise). `violations` receives the count.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes and `violations` for one write.
 */
enum MeshpdrStatus meshpdr_audit_dump(const uint8_t *bytes,
                                      size_t len,
                                      uint8_t brute,
                                      uint64_t *violations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MESHPDR_H */
