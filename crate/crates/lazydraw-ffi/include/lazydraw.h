#ifndef LAZYDRAW_H
#define LAZYDRAW_H

/* Generated by cbindgen from lazydraw-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum LdStatus {
  LD_STATUS_OK = 0,
  // Null pointer, bad sizes, or parameters outside their domain.
  LD_STATUS_INVALID_ARGUMENT = 1,
  // Malformed or mismatched files and payloads.
  LD_STATUS_DATA_ERROR = 2,
  // The operating system refused a file operation.
  LD_STATUS_IO_ERROR = 3,
  // A computation left the finite range.
  LD_STATUS_NUMERIC_ERROR = 4,
  // An internal invariant failed; the library state is still usable.
  LD_STATUS_PANICKED = 5,
} LdStatus;

// Feature rows, n x d row-major. Opaque.
typedef struct LdDataset LdDataset;

// A prebuilt top-k retrieval structure bound to one dataset shape. Opaque.
typedef struct LdIndex LdIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *ld_version(void);

// Copies the current thread's last error message into `buf` (always
// nul-terminated when `cap > 0`) and returns the full length the message
// needs, including the nul. `buf` may be null to query the length.
size_t ld_last_error(char *buf, size_t cap);

// Builds a dataset from `n` rows of `d` floats, copied from `rows`.
enum LdStatus ld_dataset_from_rows(uint64_t n,
                                   uint32_t d,
                                   const float *rows,
                                   struct LdDataset **out);

// Loads a dataset container file.
enum LdStatus ld_dataset_load(const char *path, struct LdDataset **out);

// Writes a dataset container file.
enum LdStatus ld_dataset_save(const struct LdDataset *dataset, const char *path);

// Row count; 0 for a null handle.
uint64_t ld_dataset_len(const struct LdDataset *dataset);

// Feature dimension; 0 for a null handle.
uint32_t ld_dataset_dim(const struct LdDataset *dataset);

// Releases a dataset handle. Null is a no-op.
void ld_dataset_free(struct LdDataset *dataset);

// Builds an IVF index with `n_c` centroids and `iters` refinement passes.
enum LdStatus ld_index_build_ivf(const struct LdDataset *dataset,
                                 uint64_t n_c,
                                 uint64_t iters,
                                 uint64_t seed,
                                 struct LdIndex **out);

// Builds an LSH ladder certifying score gap `c` with failure budget
// `delta` for retrievals up to `k_max`.
enum LdStatus ld_index_build_lsh(const struct LdDataset *dataset,
                                 double c,
                                 double delta,
                                 uint64_t k_max,
                                 uint64_t seed,
                                 struct LdIndex **out);

// Writes an index container file.
enum LdStatus ld_index_save(const struct LdIndex *index, const char *path);

// Loads an index container and checks it matches `dataset`.
enum LdStatus ld_index_load(const char *path,
                            const struct LdDataset *dataset,
                            struct LdIndex **out);

// Releases an index handle. Null is a no-op.
void ld_index_free(struct LdIndex *index);

// Draws `n_draws` ids from p(i) proportional to e^{scale * theta . phi_i}
// into `out_ids`, using the top-`k` lazy sampler. A null `index` scans
// exactly; `n_probe` applies to IVF indexes; `gap_c` widens the cutoff for
// approximate retrieval (NaN defers to the index's certificate). Draw `t`
// uses the RNG stream derived from (`seed`, `t`), so prefixes of a longer
// run are reproducible.
enum LdStatus ld_sample(const struct LdDataset *dataset,
                        const struct LdIndex *index,
                        size_t n_probe,
                        const double *theta,
                        size_t theta_len,
                        double scale,
                        size_t k,
                        double gap_c,
                        uint64_t seed,
                        size_t n_draws,
                        uint32_t *out_ids);

// Exact log partition function of the model.
enum LdStatus ld_log_partition_exact(const struct LdDataset *dataset,
                                     const double *theta,
                                     size_t theta_len,
                                     double scale,
                                     double *out);

// Unbiased log-partition estimate from a top-`k` set and `l` tail draws.
enum LdStatus ld_log_partition_estimate(const struct LdDataset *dataset,
                                        const struct LdIndex *index,
                                        size_t n_probe,
                                        const double *theta,
                                        size_t theta_len,
                                        double scale,
                                        size_t k,
                                        uint64_t l,
                                        uint64_t seed,
                                        double *out);

// Exact model expectation of the statistic `f` (one value per row),
// clamped to [-c_bound, c_bound].
enum LdStatus ld_expectation_exact(const struct LdDataset *dataset,
                                   const double *theta,
                                   size_t theta_len,
                                   double scale,
                                   const double *f,
                                   size_t f_len,
                                   double c_bound,
                                   double *out);

// Expectation estimate of `f` from a top-`k` set and `l` tail draws.
enum LdStatus ld_expectation_estimate(const struct LdDataset *dataset,
                                      const struct LdIndex *index,
                                      size_t n_probe,
                                      const double *theta,
                                      size_t theta_len,
                                      double scale,
                                      const double *f,
                                      size_t f_len,
                                      double c_bound,
                                      size_t k,
                                      uint64_t l,
                                      uint64_t seed,
                                      double *out);

// Upper bound on the total variation distance between exact softmax
// sampling and sampling restricted to the exact top-`k` set.
enum LdStatus ld_tv_bound(const struct LdDataset *dataset,
                          const double *theta,
                          size_t theta_len,
                          double scale,
                          size_t k,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAZYDRAW_H */
