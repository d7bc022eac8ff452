/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef PLANEOPT_H
#define PLANEOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PoStatus {
  PO_OK = 0,
  PO_NULL_ARGUMENT = 1,
  PO_INVALID_UTF8 = 2,
  PO_IO = 3,
  PO_FORMAT = 4,
  PO_INGEST = 5,
  PO_ARGUMENT = 6,
  PO_EXPORT = 7,
  PO_IMAGE = 8,
  PO_NUMERIC = 9,
  PO_CONFIG = 10,
  PO_OUT_OF_RANGE = 11,
  PO_PANIC = 12,
} PoStatus;

/**
 * Opaque run configuration.
 */
typedef struct PoConfig PoConfig;

/**
 * Opaque result of a pipeline run.
 */
typedef struct PoResult PoResult;

/**
 * Size counters of a finished run.
 */
typedef struct PoCounts {
  size_t input_vertices;
  size_t input_faces;
  size_t result_vertices;
  size_t result_faces;
  size_t keyframes;
  size_t planes;
  size_t poses;
  double total_seconds;
} PoCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *po_last_error(void);

/**
 * Library version, static string.
 */
const char *po_version(void);

/**
 * Loads a config file; relative paths inside resolve against its directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PoStatus po_config_load(const char *path, struct PoConfig **out);

/**
 * Parses config text; relative paths resolve against `base_dir`.
 *
 * # Safety
 * `text` and `base_dir` must be NUL-terminated strings and `out` a valid
 * pointer.
 */
enum PoStatus po_config_parse(const char *text, const char *base_dir, struct PoConfig **out);

/**
 * Overrides one config key, same syntax as a config file line.
 *
 * # Safety
 * `cfg` must come from `po_config_load` or `po_config_parse`; `key` and
 * `value` must be NUL-terminated strings.
 */
enum PoStatus po_config_set(struct PoConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void po_config_free(struct PoConfig *cfg);

/**
 * Runs the whole pipeline and writes the outputs to the configured
 * directory.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum PoStatus po_run(const struct PoConfig *cfg, struct PoResult **out);

/**
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void po_result_free(struct PoResult *res);

/**
 * # Safety
 * `res` must be a live result handle and `out` a valid pointer.
 */
enum PoStatus po_result_counts(const struct PoResult *res, struct PoCounts *out);

/**
 * Plane `index` as `(nx, ny, nz, w)` with `n·x + w = 0`.
 *
 * # Safety
 * `res` must be a live result handle and `out` point to 4 doubles.
 */
enum PoStatus po_result_plane(const struct PoResult *res, size_t index, double *out);

/**
 * Optimized world-to-camera pose of keyframe `index` as a row-major 4×4
 * matrix.
 *
 * # Safety
 * `res` must be a live result handle and `out` point to 16 doubles.
 */
enum PoStatus po_result_pose(const struct PoResult *res, size_t index, double *out);

/**
 * Writes a synthetic dataset (mesh, frames, trajectory, intrinsics and a
 * `planeopt.cfg`) to `dir`. `scene` is one of `box`, `room`, `room-box`,
 * `plane`.
 *
 * # Safety
 * `scene` and `dir` must be NUL-terminated strings.
 */
enum PoStatus po_synth_write(const char *scene,
                             const char *dir,
                             double edge_len,
                             double noise_sigma,
                             uint32_t frames,
                             uint32_t width,
                             uint32_t height);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLANEOPT_H */
