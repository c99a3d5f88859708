#ifndef CROWDBP_H
#define CROWDBP_H

/* This file is generated by cbindgen from crowdbp-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbpAlgorithm {
  CBP_ALG_MV = 0,
  CBP_ALG_MF = 1,
  CBP_ALG_BP = 2,
  CBP_ALG_DEEP_MF = 3,
  CBP_ALG_DEEP_BP = 4,
  CBP_ALG_CL = 5,
  CBP_ALG_TRACE = 6,
} CbpAlgorithm;

typedef enum CbpPriorFamily {
  CBP_PRIOR_ONE_COIN = 0,
  CBP_PRIOR_TWO_COIN = 1,
  CBP_PRIOR_FULL_DIRICHLET = 2,
} CbpPriorFamily;

// Status codes returned by every entry point.
typedef enum CbpStatus {
  CBP_OK = 0,
  CBP_USAGE_ERROR = 1,
  CBP_DATA_ERROR = 2,
  CBP_RUN_ERROR = 3,
  CBP_NULL_POINTER = 4,
  CBP_BUFFER_TOO_SMALL = 5,
} CbpStatus;

// Opaque dataset handle.
typedef struct CbpDataset CbpDataset;

// Opaque run-result handle.
typedef struct CbpResult CbpResult;

// Flat run configuration. `prior_alpha_full` is consulted only for the
// full-Dirichlet family and must then point at `K*K` row-major
// concentrations; it may be null otherwise.
typedef struct CbpConfig {
  enum CbpAlgorithm algorithm;
  enum CbpPriorFamily prior_family;
  double prior_alpha1;
  double prior_alpha2;
  const double *prior_alpha_full;
  // Classifier output cap in (1/K, 1]; 1 disables clipping.
  double clip;
  uint64_t seed;
  uint32_t outer_rounds;
  uint32_t classifier_epochs;
  double learning_rate;
  double l2_lambda;
  // One-hidden-layer size; 0 selects plain logistic regression.
  uint32_t mlp_hidden;
  uint32_t mc_samples;
  double damping;
  double trace_lambda;
  double trace_init_delta;
} CbpConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buffer` (NUL
// terminated, truncated to fit) and returns the full length in bytes
// including the terminator. A null or empty buffer just reports the
// required length.
size_t cbp_last_error_message(char *buffer, size_t buffer_len);

// Fills `out` with the default configuration: featureless BP under a
// OneCoin(2, 1) prior.
enum CbpStatus cbp_config_default(struct CbpConfig *out);

// Builds a dataset from parallel answer arrays. Labels and ids are
// validated; duplicates and range violations yield `CBP_DATA_ERROR`.
enum CbpStatus cbp_dataset_from_answers(size_t num_tasks,
                                        size_t num_classes,
                                        size_t num_workers,
                                        size_t num_answers,
                                        const size_t *tasks,
                                        const size_t *workers,
                                        const size_t *labels,
                                        struct CbpDataset **out);

// Loads a dataset from the CSV formats used by the CLI. `features_path`
// and `truth_path` may be null.
enum CbpStatus cbp_dataset_load(const char *labels_path,
                                const char *features_path,
                                const char *truth_path,
                                struct CbpDataset **out);

// Attaches an `num_tasks x dim` row-major feature matrix to the dataset.
enum CbpStatus cbp_dataset_set_features(struct CbpDataset *dataset,
                                        size_t dim,
                                        const double *row_major);

size_t cbp_dataset_num_tasks(const struct CbpDataset *dataset);

size_t cbp_dataset_num_classes(const struct CbpDataset *dataset);

size_t cbp_dataset_num_workers(const struct CbpDataset *dataset);

void cbp_dataset_free(struct CbpDataset *dataset);

// Runs the configured algorithm, producing a result handle.
enum CbpStatus cbp_run(const struct CbpDataset *dataset,
                       const struct CbpConfig *config,
                       struct CbpResult **out);

size_t cbp_result_num_tasks(const struct CbpResult *result);

size_t cbp_result_num_classes(const struct CbpResult *result);

size_t cbp_result_rounds(const struct CbpResult *result);

// Copies the `num_tasks x num_classes` posterior, row-major, into
// `buffer`.
enum CbpStatus cbp_result_posterior(const struct CbpResult *result,
                                    double *buffer,
                                    size_t buffer_len);

// Copies the argmax labels (ties to the lowest class) into `buffer`.
enum CbpStatus cbp_result_labels(const struct CbpResult *result, size_t *buffer, size_t buffer_len);

// Accuracy of the result's argmax labels against the dataset's ground
// truth; fails with `CBP_DATA_ERROR` when the dataset has no truth.
enum CbpStatus cbp_result_denoised_accuracy(const struct CbpResult *result,
                                            const struct CbpDataset *dataset,
                                            double *out);

void cbp_result_free(struct CbpResult *result);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CROWDBP_H */
