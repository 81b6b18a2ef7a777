#ifndef MUSE_MUSE_H
#define MUSE_MUSE_H

/* C interface to the muse library. All objects are opaque handles owned by
 * the caller and released with the matching *_free function. Functions return
 * a muse_status; on failure muse_last_error() describes the problem (the
 * message is per thread and valid until the next failing call). Strings
 * returned through char** are released with muse_string_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MUSE_API __declspec(dllexport)
#else
#define MUSE_API __attribute__((visibility("default")))
#endif

typedef enum muse_status {
    MUSE_OK = 0,
    MUSE_ERR_CONFIG = 2,
    MUSE_ERR_DATA = 3,
    MUSE_ERR_NUMERIC = 4,
    MUSE_ERR_CONTRACT = 5,
    MUSE_ERR_IO = 6,
    MUSE_ERR_INTERNAL = 7
} muse_status;

typedef struct muse_config muse_config;
typedef struct muse_dataset muse_dataset;
typedef struct muse_model muse_model;
typedef struct muse_report muse_report;

typedef struct muse_dataset_info {
    size_t samples;
    size_t k_text, d_text, k_image, d_image;
    size_t missing_text;
    size_t missing_image;
    size_t positives;
    uint64_t checksum;
} muse_dataset_info;

MUSE_API const char* muse_version(void);
MUSE_API const char* muse_last_error(void);
MUSE_API const char* muse_status_name(muse_status status);
MUSE_API void muse_string_free(char* s);

/* Configuration ("key = value" text). */
MUSE_API muse_status muse_config_default(muse_config** out);
MUSE_API muse_status muse_config_parse(const char* text, muse_config** out);
MUSE_API muse_status muse_config_load(const char* path, muse_config** out);
MUSE_API muse_status muse_config_set(muse_config* config, const char* key, const char* value);
/* Applies the MUSE_SEED environment variable when it is set. */
MUSE_API muse_status muse_config_apply_env(muse_config* config);
MUSE_API muse_status muse_config_echo(const muse_config* config, char** out);
MUSE_API muse_status muse_config_seed(const muse_config* config, uint64_t* out);
MUSE_API void muse_config_free(muse_config* config);

/* Datasets. Files ending in .jsonl use the JSON-lines format, all others MUSEF. */
MUSE_API muse_status muse_dataset_generate(const muse_config* config, muse_dataset** out);
MUSE_API muse_status muse_dataset_load(const char* path, muse_dataset** out);
MUSE_API muse_status muse_dataset_save(const muse_dataset* dataset, const char* path);
MUSE_API muse_status muse_dataset_corrupt(const muse_dataset* dataset, uint64_t seed, muse_dataset** out);
MUSE_API muse_status muse_dataset_get_info(const muse_dataset* dataset, muse_dataset_info* out);
MUSE_API void muse_dataset_free(muse_dataset* dataset);

/* Validates a MUSEF file. Returns MUSE_OK or MUSE_ERR_DATA; *message (may be
 * NULL) receives a one-line summary either way. */
MUSE_API muse_status muse_check_features(const char* path, char** message);

/* Pipeline stages. The dataset is split with the configured seed and
 * fractions, so every stage sees the same train/valid/test partition. */
MUSE_API muse_status muse_search(const muse_config* config, const muse_dataset* dataset, muse_model** out);
MUSE_API muse_status muse_discretize(const muse_model* model, muse_model** out);
/* A searched model is discretized first; a discrete one is trained further. */
MUSE_API muse_status muse_retrain(const muse_config* config, const muse_dataset* dataset, const muse_model* model,
                                  muse_model** out);
MUSE_API muse_status muse_model_save(const muse_model* model, const char* path);
MUSE_API muse_status muse_model_load(const char* path, muse_model** out);
MUSE_API muse_status muse_model_genotype(const muse_model* model, char** out);
MUSE_API muse_status muse_model_is_discrete(const muse_model* model, int* out);
MUSE_API void muse_model_free(muse_model* model);

/* Reports. */
MUSE_API muse_status muse_evaluate(const muse_config* config, const muse_dataset* dataset, const muse_model* model,
                                   muse_report** out);
/* dataset may be NULL: the configuration then supplies the data. */
MUSE_API muse_status muse_run_experiment(const muse_config* config, const muse_dataset* dataset, muse_report** out);
MUSE_API muse_status muse_ablate_operators(const muse_config* config, const muse_dataset* dataset,
                                           const muse_model* searched, muse_report** out);
MUSE_API muse_status muse_ablate_paths(const muse_config* config, const muse_dataset* dataset, muse_report** out);
MUSE_API muse_status muse_report_csv(const muse_report* report, char** out);
MUSE_API muse_status muse_report_table(const muse_report* report, char** out);
MUSE_API muse_status muse_report_row_count(const muse_report* report, size_t* out);
MUSE_API muse_status muse_report_row(const muse_report* report, size_t index, const char** label, double* accuracy);
MUSE_API void muse_report_free(muse_report* report);

#ifdef __cplusplus
}
#endif

#endif
