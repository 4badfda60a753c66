/*
 * clmfit: constrained local model landmark fitting with convolutional experts
 *
 * Copyright 2026 The clmfit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef CLMFIT_CLMFIT_H
#define CLMFIT_CLMFIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(CLMFIT_BUILDING_LIBRARY)
#define CLMFIT_API __attribute__((visibility("default")))
#else
#define CLMFIT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/*
 * Status codes double as the command-line exit codes. Every function
 * returning clmfit_status records a message retrievable with
 * clmfit_last_error() (per thread) when it fails.
 */
typedef enum clmfit_status {
    CLMFIT_OK = 0,
    CLMFIT_LOW_CONFIDENCE = 2,
    CLMFIT_ERR_IO = 3,
    CLMFIT_ERR_VALIDATION = 4,
    CLMFIT_ERR_NUMERICAL = 5,
    CLMFIT_ERR_INTERNAL = 6
} clmfit_status;

typedef enum clmfit_log_level {
    CLMFIT_LOG_DEBUG = 0,
    CLMFIT_LOG_INFO = 1,
    CLMFIT_LOG_WARN = 2
} clmfit_log_level;

typedef void (*clmfit_log_fn)(clmfit_log_level level, const char* message, void* user);

typedef struct clmfit_pdm clmfit_pdm;
typedef struct clmfit_bank clmfit_bank;
typedef struct clmfit_image clmfit_image;
typedef struct clmfit_config clmfit_config;
typedef struct clmfit_result clmfit_result;

CLMFIT_API const char* clmfit_version(void);
CLMFIT_API const char* clmfit_last_error(void);
CLMFIT_API const char* clmfit_status_name(clmfit_status status);
/* Process-wide; pass NULL to silence. */
CLMFIT_API void clmfit_set_log_callback(clmfit_log_fn fn, void* user);

/* Shape model */
CLMFIT_API clmfit_status clmfit_pdm_load(const char* path, clmfit_pdm** out);
/* Built-in 12-landmark face layout (eye corners 0 and 3) with `modes` synthetic shape modes. */
CLMFIT_API clmfit_status clmfit_pdm_face_layout(int modes, uint64_t seed, clmfit_pdm** out);
CLMFIT_API clmfit_status clmfit_pdm_save(const clmfit_pdm* pdm, const char* path);
CLMFIT_API void clmfit_pdm_free(clmfit_pdm* pdm);
CLMFIT_API int clmfit_pdm_landmarks(const clmfit_pdm* pdm);
CLMFIT_API int clmfit_pdm_modes(const clmfit_pdm* pdm);

/* Detector bank: manifest file or directory holding manifest.json.
 * Models with negative combiner weights load only when allow_negative != 0. */
CLMFIT_API clmfit_status clmfit_bank_load(const char* path, int allow_negative, clmfit_bank** out);
CLMFIT_API void clmfit_bank_free(clmfit_bank* bank);

/* Grayscale images */
CLMFIT_API clmfit_status clmfit_image_load_pgm(const char* path, clmfit_image** out);
/* Copies width * height row-major intensities. */
CLMFIT_API clmfit_status clmfit_image_create(int width, int height, const double* pixels, clmfit_image** out);
CLMFIT_API void clmfit_image_free(clmfit_image* image);
CLMFIT_API int clmfit_image_width(const clmfit_image* image);
CLMFIT_API int clmfit_image_height(const clmfit_image* image);

/* Fitting configuration */
CLMFIT_API clmfit_status clmfit_config_default(clmfit_config** out);
CLMFIT_API clmfit_status clmfit_config_load(const char* path, clmfit_config** out);
CLMFIT_API void clmfit_config_free(clmfit_config* config);
CLMFIT_API clmfit_status clmfit_config_set_threads(clmfit_config* config, int threads);
/* Optional per-landmark reliability (JSON array); NULL path restores uniform weights. */
CLMFIT_API clmfit_status clmfit_config_set_reliability(clmfit_config* config, const char* path);

/*
 * Multi-hypothesis fit inside bbox = {x, y, width, height}. On CLMFIT_OK and
 * CLMFIT_LOW_CONFIDENCE `*out` holds the result; otherwise it is untouched.
 */
CLMFIT_API clmfit_status clmfit_fit(const clmfit_pdm* pdm, const clmfit_bank* bank, const clmfit_image* image,
                                    const clmfit_config* config, const double bbox[4], int exhaustive,
                                    clmfit_result** out);
CLMFIT_API void clmfit_result_free(clmfit_result* result);
CLMFIT_API int clmfit_result_landmarks(const clmfit_result* result);
CLMFIT_API clmfit_status clmfit_result_landmark(const clmfit_result* result, int index, double* x, double* y,
                                                int* visible);
CLMFIT_API double clmfit_result_map_score(const clmfit_result* result);
CLMFIT_API int clmfit_result_iterations(const clmfit_result* result);
CLMFIT_API int clmfit_result_hypotheses(const clmfit_result* result);
CLMFIT_API int clmfit_result_low_confidence(const clmfit_result* result);
CLMFIT_API clmfit_status clmfit_result_save_csv(const clmfit_result* result, const char* path);

/* Synthetic scenes: scene_NNNN.pgm plus scene_NNNN.json per scene. */
typedef struct clmfit_synth_options {
    int count;
    uint64_t seed;
    int width;
    int height;
    double iod_px;
    double scale_jitter;
    double yaw_deg;
    double pitch_deg;
    double roll_deg;
    double nonrigid_fraction;
} clmfit_synth_options;

CLMFIT_API void clmfit_synth_options_default(clmfit_synth_options* options);
CLMFIT_API clmfit_status clmfit_synth(const clmfit_pdm* pdm, const clmfit_synth_options* options,
                                      const char* out_dir);

/*
 * Toy detector training. With a data directory, patches are cut around the
 * landmarks of its scenes (the last test_fraction of scenes, by name, form
 * the test split); with data_dir NULL, isolated landmark patches are rendered.
 */
typedef struct clmfit_train_options {
    double learning_rate;
    int epochs;
    int batch_size;
    double label_sigma;
    uint64_t seed;
    int enforce_nonneg;
    int correlation;
    int hidden;
    int experts;
    int roi_size;
    double max_offset;
    int scale_px;
    double test_fraction;
    int samples;            /* rendered patches when data_dir is NULL */
    int test_samples;
    int bank_landmarks;     /* landmarks mapped to the model in a written bank; 0 = from data */
    double reference_iod_px; /* face size the rendered appearance is drawn for */
} clmfit_train_options;

typedef struct clmfit_train_report {
    double initial_loss;
    double final_loss;
    double test_r2;
    double test_rmse;
    int train_samples;
    int test_samples;
} clmfit_train_report;

CLMFIT_API void clmfit_train_options_default(clmfit_train_options* options);
/* loss_csv and bank_dir may be NULL. An existing bank in bank_dir is
 * extended: the new model is added at options->scale_px for view 0. */
CLMFIT_API clmfit_status clmfit_train(const char* data_dir, const clmfit_train_options* options,
                                      const char* model_out, const char* loss_csv, const char* bank_dir,
                                      clmfit_train_report* report);

/*
 * Normalized errors of predictions (fit CSVs) against scene sidecars, paired
 * by position. mode is "iod" or "size". curve_csv and report_json may be NULL.
 */
CLMFIT_API clmfit_status clmfit_eval(const char* const* pred_paths, const char* const* truth_paths, size_t count,
                                     const char* mode, const char* curve_csv, const char* report_json,
                                     double* median_error);

/* Recomputes every sidecar's landmarks from its parameters; *failures counts mismatches. */
CLMFIT_API clmfit_status clmfit_self_check(const clmfit_pdm* pdm, const char* const* sidecar_paths, size_t count,
                                           double tolerance, size_t* failures);

#ifdef __cplusplus
}
#endif

#endif /* CLMFIT_CLMFIT_H */
