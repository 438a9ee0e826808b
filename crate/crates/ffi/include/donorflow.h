#ifndef DONORFLOW_H
#define DONORFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The score is undefined for this input (too few pairs, zero variance).
   */
  DF_STATUS_UNDEFINED = 3,
  DF_STATUS_IO = 4,
  DF_STATUS_MODEL = 5,
  DF_STATUS_PANIC = 6,
} DfStatus;

/**
 * Opaque trained model.
 */
typedef struct DfModel DfModel;

/**
 * Opaque similarity matrix over a descriptor table.
 */
typedef struct DfSimilarity DfSimilarity;

typedef struct DfKge {
  double kge;
  double r;
  double alpha;
  double beta;
} DfKge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *df_last_error_message(void);

void df_clear_last_error(void);

/**
 * Nash–Sutcliffe efficiency over the pairs where neither value is NaN.
 *
 * # Safety
 * `obs` and `sim` point to `len` values; `result` is writable.
 */
enum DfStatus df_nse(const double *obs, const double *sim, size_t len, double *result);

/**
 * Kling–Gupta efficiency and its components.
 *
 * # Safety
 * `obs` and `sim` point to `len` values; `result` is writable.
 */
enum DfStatus df_kge(const double *obs, const double *sim, size_t len, struct DfKge *result);

/**
 * Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
 *
 * # Safety
 * `x` points to `nx` values, `y` to `ny`; `d` and `p` are writable.
 */
enum DfStatus df_ks_two_sample(const double *x,
                               size_t nx,
                               const double *y,
                               size_t ny,
                               double *d,
                               double *p);

/**
 * Histogram mutual information in nats with `bins` equal-frequency bins.
 *
 * # Safety
 * `x` and `y` point to `len` values; `result` is writable.
 */
enum DfStatus df_mutual_information(const double *x,
                                    const double *y,
                                    size_t len,
                                    size_t bins,
                                    double *result);

/**
 * Cosine similarity of two vectors.
 *
 * # Safety
 * `u` and `v` point to `len` values; `result` is writable.
 */
enum DfStatus df_cosine(const double *u, const double *v, size_t len, double *result);

/**
 * Standardises an `n_basins`×`width` descriptor table and builds its cosine
 * similarity matrix. Basins are addressed by row index.
 *
 * # Safety
 * `values` points to `n_basins * width` values; `handle` is writable.
 */
enum DfStatus df_similarity_new(const double *values,
                                size_t n_basins,
                                size_t width,
                                struct DfSimilarity **handle);

/**
 * Similarity between rows `i` and `j`.
 *
 * # Safety
 * `handle` comes from [`df_similarity_new`]; `result` is writable.
 */
enum DfStatus df_similarity_get(const struct DfSimilarity *handle,
                                size_t i,
                                size_t j,
                                double *result);

/**
 * Row indices of the `k` rows most similar to `target`, most similar first,
 * ties broken by lower index.
 *
 * # Safety
 * `handle` comes from [`df_similarity_new`]; `donors` has room for `k` values.
 */
enum DfStatus df_similarity_rank(const struct DfSimilarity *handle,
                                 size_t target,
                                 size_t k,
                                 size_t *donors);

/**
 * # Safety
 * `handle` is NULL or comes from [`df_similarity_new`] and is not used again.
 */
void df_similarity_free(struct DfSimilarity *handle);

/**
 * K-means (k-means++ seeding, best of `restarts`) on `n`×`d` points. Writes
 * one label per point and the fit's silhouette score.
 *
 * # Safety
 * `points` holds `n * d` values, `labels` has room for `n`; `silhouette` is
 * writable.
 */
enum DfStatus df_kmeans(const double *points,
                        size_t n,
                        size_t d,
                        size_t k,
                        uint64_t seed,
                        size_t restarts,
                        size_t *labels,
                        double *silhouette);

/**
 * Loads a model file written by `donorflow train`.
 *
 * # Safety
 * `path` is a nul-terminated UTF-8 string; `handle` is writable.
 */
enum DfStatus df_model_load(const char *path, struct DfModel **handle);

/**
 * Window length, forcing count and static count the model expects.
 *
 * # Safety
 * `handle` comes from [`df_model_load`]; the outputs are writable.
 */
enum DfStatus df_model_shape(const struct DfModel *handle,
                             size_t *seq_len,
                             size_t *n_dyn,
                             size_t *n_static);

/**
 * Simulated flow in mm/day. `forcing` is `n_days`×n_dyn in archive units and
 * column order, `statics` the raw descriptor row. Writes
 * `n_days - seq_len + 1` values, one per day from the first full window.
 *
 * # Safety
 * `handle` comes from [`df_model_load`]; array sizes as described above.
 */
enum DfStatus df_model_predict(const struct DfModel *handle,
                               const double *forcing,
                               size_t n_days,
                               const double *statics,
                               size_t n_static,
                               double *flow,
                               size_t flow_len);

/**
 * # Safety
 * `handle` is NULL or comes from [`df_model_load`] and is not used again.
 */
void df_model_free(struct DfModel *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DONORFLOW_H */
