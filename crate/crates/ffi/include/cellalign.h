/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef CELLALIGN_H
#define CELLALIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CaStatus {
  CA_STATUS_OK = 0,
  CA_STATUS_NULL_POINTER = 1,
  CA_STATUS_INVALID_INPUT = 2,
  CA_STATUS_CONFIG = 3,
  CA_STATUS_TOO_FEW = 4,
  CA_STATUS_DEGENERATE = 5,
  CA_STATUS_IO = 6,
  CA_STATUS_PARSE = 7,
  CA_STATUS_PANIC = 8,
} CaStatus;

/**
 * Opaque alignment result.
 */
typedef struct CaAlignment CaAlignment;

/**
 * Opaque cell table.
 */
typedef struct CaCellTable CaCellTable;

typedef struct CaPoint {
  double x;
  double y;
} CaPoint;

typedef struct CaRigidTransform {
  double theta_rad;
  double scale;
  double dx_um;
  double dy_um;
} CaRigidTransform;

typedef struct CaAffineTransform {
  double a11;
  double a12;
  double a21;
  double a22;
  double tx_um;
  double ty_um;
} CaAffineTransform;

typedef struct CaEvaluation {
  double delta_d;
  double delta_t;
  double delta_theta_rad;
} CaEvaluation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ca_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ca_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void ca_string_free(char *s);

/**
 * Rigid CPD of `source` onto `target`. `config_json` may be null for the
 * defaults.
 *
 * # Safety
 * Point arrays must hold the stated counts; `out` must be writable.
 */
enum CaStatus ca_cpd_rigid(const struct CaPoint *source,
                           size_t n_source,
                           const struct CaPoint *target,
                           size_t n_target,
                           const char *config_json,
                           struct CaRigidTransform *out);

/**
 * Least-squares rigid fit of `n` correspondences.
 *
 * # Safety
 * Both arrays must hold `n` points; `out` must be writable.
 */
enum CaStatus ca_fit_rigid(const struct CaPoint *source,
                           const struct CaPoint *target,
                           size_t n,
                           bool estimate_scale,
                           struct CaRigidTransform *out);

/**
 * Least-squares affine fit of `n` correspondences.
 *
 * # Safety
 * Both arrays must hold `n` points; `out` must be writable.
 */
enum CaStatus ca_fit_affine(const struct CaPoint *source,
                            const struct CaPoint *target,
                            size_t n,
                            struct CaAffineTransform *out);

/**
 * Landmark accuracy of `estimated` against `ground_truth`.
 *
 * # Safety
 * Landmark arrays must hold `n` points; transforms must be readable and
 * `out` writable.
 */
enum CaStatus ca_evaluate(const struct CaPoint *landmarks_source,
                          const struct CaPoint *landmarks_target,
                          size_t n,
                          const struct CaAffineTransform *estimated,
                          const struct CaAffineTransform *ground_truth,
                          struct CaEvaluation *out);

/**
 * Reads a cell table CSV. `schema_json` may be null for the default
 * column mapping.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CaStatus ca_cell_table_read(const char *path,
                                 const char *schema_json,
                                 struct CaCellTable **out);

/**
 * Table of featureless cells with ids `0..n`.
 *
 * # Safety
 * `points` must hold `n` points; `out` must be writable.
 */
enum CaStatus ca_cell_table_from_points(const struct CaPoint *points_in,
                                        size_t n,
                                        struct CaCellTable **out);

/**
 * Number of cells; 0 for null.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t ca_cell_table_len(const struct CaCellTable *table);

/**
 * # Safety
 * `table` must be null or a live handle, not used afterwards.
 */
void ca_cell_table_free(struct CaCellTable *table);

/**
 * Synthetic source/target pair from a scenario JSON (null for defaults).
 *
 * # Safety
 * Output pointers must be writable; `truth` may be null.
 */
enum CaStatus ca_synth(const char *scenario_json,
                       struct CaCellTable **source,
                       struct CaCellTable **target,
                       struct CaRigidTransform *truth);

/**
 * Full alignment. `config_json` may be null for the defaults; a config
 * with a `supercell` entry runs the super-cell coarse stage.
 *
 * # Safety
 * Tables must be live handles; `out` must be writable.
 */
enum CaStatus ca_align(const struct CaCellTable *source,
                       const struct CaCellTable *target,
                       const char *config_json,
                       uint64_t seed,
                       struct CaAlignment **out);

/**
 * # Safety
 * `a` must be a live handle; `out` must be writable.
 */
enum CaStatus ca_alignment_coarse(const struct CaAlignment *a, struct CaRigidTransform *out);

/**
 * # Safety
 * `a` must be a live handle; `out` must be writable.
 */
enum CaStatus ca_alignment_refined(const struct CaAlignment *a, struct CaAffineTransform *out);

/**
 * Whether refinement fell back to the coarse transform; false for null.
 *
 * # Safety
 * `a` must be null or a live handle.
 */
bool ca_alignment_coarse_only(const struct CaAlignment *a);

/**
 * Number of retained matches; 0 for null.
 *
 * # Safety
 * `a` must be null or a live handle.
 */
size_t ca_alignment_match_count(const struct CaAlignment *a);

/**
 * The whole result as JSON; free with [`ca_string_free`]. Null on failure.
 *
 * # Safety
 * `a` must be null or a live handle.
 */
char *ca_alignment_to_json(const struct CaAlignment *a);

/**
 * # Safety
 * `a` must be null or a live handle, not used afterwards.
 */
void ca_alignment_free(struct CaAlignment *a);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELLALIGN_H */
