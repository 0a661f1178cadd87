#ifndef ACTTAIL_H
#define ACTTAIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AtStatus {
  AT_STATUS_OK = 0,
  AT_STATUS_NULL_POINTER = 1,
  AT_STATUS_INVALID_ARGUMENT = 2,
  AT_STATUS_FORMAT = 3,
  AT_STATUS_UNSUPPORTED_DTYPE = 4,
  AT_STATUS_DOMAIN = 5,
  AT_STATUS_DEGENERATE_SPECTRUM = 6,
  AT_STATUS_INFEASIBLE = 7,
  AT_STATUS_IO = 8,
  AT_STATUS_INTERNAL = 9,
  AT_STATUS_PANIC = 10,
} AtStatus;

typedef enum AtProjKind {
  AT_PROJ_KIND_Q = 0,
  AT_PROJ_KIND_K = 1,
  AT_PROJ_KIND_V = 2,
  AT_PROJ_KIND_O = 3,
  AT_PROJ_KIND_GATE = 4,
  AT_PROJ_KIND_UP = 5,
  AT_PROJ_KIND_DOWN = 6,
  AT_PROJ_KIND_OTHER = 7,
} AtProjKind;

/**
 * Loaded or synthesized weight matrices.
 */
typedef struct AtMatrixSet AtMatrixSet;

typedef struct AtPlan AtPlan;

/**
 * Per-matrix spectral fits, in matrix order.
 */
typedef struct AtSpectra AtSpectra;

/**
 * Fit summary of one matrix. `ok` is false when the fit failed; the numeric
 * fields are then NaN or zero.
 */
typedef struct AtSpectrumInfo {
  size_t layer;
  enum AtProjKind proj;
  size_t n;
  size_t d_out;
  bool ok;
  double alpha;
  size_t k_used;
  double lambda_ref;
  double lambda_max;
} AtSpectrumInfo;

/**
 * One plan row. `alpha` is NaN for uniform plans.
 */
typedef struct AtPlanEntry {
  size_t layer;
  enum AtProjKind proj;
  double alpha;
  size_t d_in;
  size_t params;
  double s;
  size_t k;
} AtPlanEntry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from this thread.
 */
const char *at_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void at_string_free(char *s);

/**
 * Loads every 2-D tensor of a tensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AtStatus at_matrix_set_load(const char *path, struct AtMatrixSet **out);

/**
 * Synthetic stack with one exponent for attention and one for MLP
 * projections.
 *
 * # Safety
 * `out` must be writable.
 */
enum AtStatus at_matrix_set_synth_stack(size_t layers,
                                        size_t d_model,
                                        double alpha_attn,
                                        double alpha_mlp,
                                        uint64_t seed,
                                        struct AtMatrixSet **out);

/**
 * # Safety
 * `set` must be a live handle and `path` a NUL-terminated string.
 */
enum AtStatus at_matrix_set_save(const struct AtMatrixSet *set, const char *path);

/**
 * Number of matrices; 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t at_matrix_set_len(const struct AtMatrixSet *set);

/**
 * # Safety
 * `set` must be a live handle; `rows` and `cols` must be writable.
 */
enum AtStatus at_matrix_set_shape(const struct AtMatrixSet *set,
                                  size_t index,
                                  size_t *rows,
                                  size_t *cols);

/**
 * Tensor name of a matrix, owned by the set; NULL if out of range.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
const char *at_matrix_set_name(const struct AtMatrixSet *set, size_t index);

/**
 * # Safety
 * `set` must be NULL or a handle not yet freed.
 */
void at_matrix_set_free(struct AtMatrixSet *set);

/**
 * Hill fit of every matrix. A matrix whose fit fails still gets an entry
 * with `ok = false`.
 *
 * # Safety
 * `set` must be a live handle; `out` must be writable.
 */
enum AtStatus at_analyze(const struct AtMatrixSet *set, double k_fraction, struct AtSpectra **out);

/**
 * # Safety
 * `spectra` must be NULL or a live handle.
 */
size_t at_spectra_len(const struct AtSpectra *spectra);

/**
 * # Safety
 * `spectra` must be a live handle; `out` must be writable.
 */
enum AtStatus at_spectra_get(const struct AtSpectra *spectra,
                             size_t index,
                             struct AtSpectrumInfo *out);

/**
 * # Safety
 * `spectra` must be NULL or a handle not yet freed.
 */
void at_spectra_free(struct AtSpectra *spectra);

/**
 * ActTail allocation from fitted exponents. Failed fits and matrices that
 * are not block projections are left out of the plan. Pass NaN for `s1`,
 * `s2` or `clamp` to use `0.8·S`, `1.2·S` and `0.99`.
 *
 * # Safety
 * `spectra` and `set` must be live handles from the same matrices; `out`
 * must be writable.
 */
enum AtStatus at_allocate(const struct AtSpectra *spectra,
                          const struct AtMatrixSet *set,
                          double global_sparsity,
                          double s1,
                          double s2,
                          double clamp,
                          struct AtPlan **out);

/**
 * Every projection of `set` at sparsity `S`.
 *
 * # Safety
 * `set` must be a live handle; `out` must be writable.
 */
enum AtStatus at_uniform_plan(const struct AtMatrixSet *set,
                              double global_sparsity,
                              struct AtPlan **out);

/**
 * # Safety
 * `plan` must be NULL or a live handle.
 */
size_t at_plan_len(const struct AtPlan *plan);

/**
 * `η`, or NaN for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
double at_plan_eta(const struct AtPlan *plan);

/**
 * Parameter-weighted sparsity realized by the integer keep counts, or NaN
 * for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
double at_plan_achieved(const struct AtPlan *plan);

/**
 * # Safety
 * `plan` must be a live handle; `out` must be writable.
 */
enum AtStatus at_plan_entry(const struct AtPlan *plan, size_t index, struct AtPlanEntry *out);

/**
 * Plan as pretty JSON; free with [`at_string_free`]. NULL on failure.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
char *at_plan_to_json(const struct AtPlan *plan);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AtStatus at_plan_from_json(const char *json, struct AtPlan **out);

/**
 * # Safety
 * `plan` must be NULL or a handle not yet freed.
 */
void at_plan_free(struct AtPlan *plan);

/**
 * Hill exponent from `n` ascending positive eigenvalues using the top `k`.
 *
 * # Safety
 * `eigenvalues` must point to `n` readable doubles; `alpha` must be
 * writable.
 */
enum AtStatus at_hill_alpha(const double *eigenvalues, size_t n, size_t k, double *alpha);

/**
 * Keeps the `k` largest-magnitude entries of `h`. Writes the kept indices
 * in ascending order to `kept` (room for `k`) and, if `sparse` is not
 * NULL, the masked vector (room for `n`).
 *
 * # Safety
 * `h` must point to `n` readable doubles, `kept` to `k` writable slots and
 * `sparse` to NULL or `n` writable doubles.
 */
enum AtStatus at_topk_mask(const double *h, size_t n, size_t k, size_t *kept, double *sparse);

/**
 * `W·T_k(h)` for matrix `index` of `set`. `h` has the matrix's input width
 * and `out` room for its output width.
 *
 * # Safety
 * `set` must be a live handle; `h` must point to `n` readable doubles and
 * `out` to `out_len` writable doubles.
 */
enum AtStatus at_masked_project(const struct AtMatrixSet *set,
                                size_t index,
                                const double *h,
                                size_t n,
                                size_t k,
                                double *out,
                                size_t out_len);

/**
 * Keep count guaranteeing truncation error at most `epsilon` with
 * probability `1 − delta`, capped at `d_out`.
 *
 * # Safety
 * `k` must be writable.
 */
enum AtStatus at_theoretical_k(double alpha, double epsilon, size_t d_out, double delta, size_t *k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTTAIL_H */
