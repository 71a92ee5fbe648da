#ifndef MIXR_MIXR_H
#define MIXR_MIXR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MIXR_API __declspec(dllexport)
#else
#define MIXR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mixr_status {
  MIXR_OK = 0,
  MIXR_ERR_INPUT = 1,
  MIXR_ERR_PARSE = 2,
  MIXR_ERR_IO = 3,
  MIXR_ERR_CONFIG = 4,
  MIXR_ERR_DIVERGED = 5,
  MIXR_PARTIAL = 6, /* command finished but some methods failed */
  MIXR_ERR_INTERNAL = 7
} mixr_status;

typedef struct mixr_dataset mixr_dataset;
typedef struct mixr_knn_index mixr_knn_index;
typedef struct mixr_policy mixr_policy;

MIXR_API const char* mixr_version(void);

/* Message of the last failed call on this thread; "" after a success. */
MIXR_API const char* mixr_last_error(void);

MIXR_API const char* mixr_status_name(mixr_status status);

/* Diagnostics go to stderr. level: "debug", "info", "warn", "error" or "off". */
MIXR_API mixr_status mixr_set_log_level(const char* level);

/* Datasets */

MIXR_API mixr_status mixr_dataset_load_csv(const char* path, const char* const* label_columns,
                                           size_t label_count, mixr_dataset** out);
/* rows x feature_dim and rows x label_dim, row-major. */
MIXR_API mixr_status mixr_dataset_create(const double* features, const double* labels, size_t rows,
                                         size_t feature_dim, size_t label_dim, mixr_dataset** out);
/* spec_json is a synthetic spec object, e.g. {"kind":"toy1d","seed":3}. */
MIXR_API mixr_status mixr_dataset_generate(const char* spec_json, mixr_dataset** out);
MIXR_API mixr_status mixr_dataset_write_csv(const mixr_dataset* data, const char* path);
MIXR_API size_t mixr_dataset_rows(const mixr_dataset* data);
MIXR_API size_t mixr_dataset_feature_dim(const mixr_dataset* data);
MIXR_API size_t mixr_dataset_label_dim(const mixr_dataset* data);
/* Copies into caller buffers of at least rows * dim doubles. */
MIXR_API mixr_status mixr_dataset_features(const mixr_dataset* data, double* out, size_t capacity);
MIXR_API mixr_status mixr_dataset_labels(const mixr_dataset* data, double* out, size_t capacity);
MIXR_API void mixr_dataset_free(mixr_dataset* data);

/* Nearest neighbors */

MIXR_API mixr_status mixr_knn_build(const mixr_dataset* data, size_t workers, mixr_knn_index** out);
/* Writes the k nearest neighbors of example i into out_ids. */
MIXR_API mixr_status mixr_knn_query(const mixr_knn_index* index, size_t i, size_t k, size_t* out_ids);
MIXR_API void mixr_knn_free(mixr_knn_index* index);

/* Mixing policies */

MIXR_API mixr_status mixr_policy_create(const size_t* counts, size_t examples, mixr_policy** out);
MIXR_API mixr_status mixr_policy_load(const char* path, mixr_policy** out);
MIXR_API mixr_status mixr_policy_save(const mixr_policy* policy, const char* path);
MIXR_API size_t mixr_policy_size(const mixr_policy* policy);
MIXR_API size_t mixr_policy_k(const mixr_policy* policy, size_t i);
MIXR_API void mixr_policy_free(mixr_policy* policy);

/* D U Mix(D, P) with a fixed mixing ratio. */
MIXR_API mixr_status mixr_augment(const mixr_dataset* data, const mixr_knn_index* index,
                                  const mixr_policy* policy, double lambda, mixr_dataset** out);

/* Commands */

typedef struct mixr_run_options {
  const char* out_dir;     /* required */
  int has_seed;            /* nonzero: seed overrides the config */
  uint64_t seed;
  size_t workers;          /* 0: keep the config value */
  const char* methods;     /* comma-separated method names, or NULL */
  const char* policy_path; /* or NULL */
} mixr_run_options;

MIXR_API void mixr_run_options_init(mixr_run_options* options);

/* command: search, compare, augment, analyze or gen-synthetic. The config is
   a JSON file; a run manifest replays that run. */
MIXR_API mixr_status mixr_run(const char* command, const char* config_path,
                              const mixr_run_options* options);
MIXR_API mixr_status mixr_run_json(const char* command, const char* config_json,
                                   const mixr_run_options* options);

#ifdef __cplusplus
}
#endif

#endif
