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
#include "clmfit/clmfit.h"

#include "clmfit/metrics.hpp"
#include "clmfit/model_io.hpp"
#include "clmfit/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <string>

namespace fs = std::filesystem;
using namespace clmfit;

struct clmfit_pdm {
    PdmModel model;
};

struct clmfit_bank {
    CenBank bank;
};

struct clmfit_image {
    Image image;
};

struct clmfit_config {
    NurlmsConfig cfg;
    std::optional<LandmarkReliability> reliability;
};

struct clmfit_result {
    FitResult result;
};

namespace {

thread_local std::string last_error;

std::mutex log_mutex;
clmfit_log_fn log_fn = nullptr;
void* log_user = nullptr;

void log(clmfit_log_level level, const std::string& message)
{
    std::lock_guard lock(log_mutex);
    if (log_fn) {
        log_fn(level, message.c_str(), log_user);
    }
}

clmfit_status status_of(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::io:
        return CLMFIT_ERR_IO;
    case ErrorKind::numerical:
        return CLMFIT_ERR_NUMERICAL;
    case ErrorKind::validation:
    case ErrorKind::config:
        return CLMFIT_ERR_VALIDATION;
    }
    return CLMFIT_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into status codes and the thread's last error.
template <typename Fn>
clmfit_status guarded(Fn&& fn)
{
    try {
        last_error.clear();
        return fn();
    } catch (const Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const fs::filesystem_error& e) {
        last_error = e.what();
        return CLMFIT_ERR_IO;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return CLMFIT_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return CLMFIT_ERR_INTERNAL;
    }
}

clmfit_status null_argument(const char* name)
{
    last_error = std::string("null argument: ") + name;
    return CLMFIT_ERR_VALIDATION;
}

std::string scene_stem(int k)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", k);
    return buf;
}

// Scene sidecars in a directory, sorted by name.
std::vector<fs::path> list_sidecars(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        fail(ErrorKind::io, "not a directory: " + dir.string());
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            fs::path pgm = entry.path();
            pgm.replace_extension(".pgm");
            if (fs::exists(pgm)) {
                out.push_back(entry.path());
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

extern "C" {

const char* clmfit_version(void)
{
    return "1.0.0";
}

const char* clmfit_last_error(void)
{
    return last_error.c_str();
}

const char* clmfit_status_name(clmfit_status status)
{
    switch (status) {
    case CLMFIT_OK:
        return "ok";
    case CLMFIT_LOW_CONFIDENCE:
        return "low confidence";
    case CLMFIT_ERR_IO:
        return "I/O error";
    case CLMFIT_ERR_VALIDATION:
        return "validation error";
    case CLMFIT_ERR_NUMERICAL:
        return "numerical failure";
    case CLMFIT_ERR_INTERNAL:
        return "internal error";
    }
    return "unknown status";
}

void clmfit_set_log_callback(clmfit_log_fn fn, void* user)
{
    std::lock_guard lock(log_mutex);
    log_fn = fn;
    log_user = user;
}

clmfit_status clmfit_pdm_load(const char* path, clmfit_pdm** out)
{
    if (!path || !out) {
        return null_argument("path/out");
    }
    return guarded([&] {
        *out = new clmfit_pdm{io::load_pdm(path)};
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_pdm_face_layout(int modes, uint64_t seed, clmfit_pdm** out)
{
    if (!out) {
        return null_argument("out");
    }
    return guarded([&] {
        *out = new clmfit_pdm{face_layout_pdm(modes, seed)};
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_pdm_save(const clmfit_pdm* pdm, const char* path)
{
    if (!pdm || !path) {
        return null_argument("pdm/path");
    }
    return guarded([&] {
        io::save_pdm(pdm->model, path);
        return CLMFIT_OK;
    });
}

void clmfit_pdm_free(clmfit_pdm* pdm)
{
    delete pdm;
}

int clmfit_pdm_landmarks(const clmfit_pdm* pdm)
{
    return pdm ? pdm->model.n_landmarks() : 0;
}

int clmfit_pdm_modes(const clmfit_pdm* pdm)
{
    return pdm ? pdm->model.n_modes() : 0;
}

clmfit_status clmfit_bank_load(const char* path, int allow_negative, clmfit_bank** out)
{
    if (!path || !out) {
        return null_argument("path/out");
    }
    return guarded([&] {
        *out = new clmfit_bank{io::load_bank(path, allow_negative != 0)};
        return CLMFIT_OK;
    });
}

void clmfit_bank_free(clmfit_bank* bank)
{
    delete bank;
}

clmfit_status clmfit_image_load_pgm(const char* path, clmfit_image** out)
{
    if (!path || !out) {
        return null_argument("path/out");
    }
    return guarded([&] {
        *out = new clmfit_image{io::load_pgm(path)};
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_image_create(int width, int height, const double* pixels, clmfit_image** out)
{
    if (!pixels || !out) {
        return null_argument("pixels/out");
    }
    return guarded([&] {
        if (width <= 0 || height <= 0) {
            fail(ErrorKind::validation, "image dimensions must be positive");
        }
        Image image(width, height);
        std::copy(pixels, pixels + static_cast<std::size_t>(width) * height, image.pixels().begin());
        *out = new clmfit_image{std::move(image)};
        return CLMFIT_OK;
    });
}

void clmfit_image_free(clmfit_image* image)
{
    delete image;
}

int clmfit_image_width(const clmfit_image* image)
{
    return image ? image->image.width() : 0;
}

int clmfit_image_height(const clmfit_image* image)
{
    return image ? image->image.height() : 0;
}

clmfit_status clmfit_config_default(clmfit_config** out)
{
    if (!out) {
        return null_argument("out");
    }
    return guarded([&] {
        *out = new clmfit_config{};
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_config_load(const char* path, clmfit_config** out)
{
    if (!path || !out) {
        return null_argument("path/out");
    }
    return guarded([&] {
        *out = new clmfit_config{io::load_config(path), std::nullopt};
        return CLMFIT_OK;
    });
}

void clmfit_config_free(clmfit_config* config)
{
    delete config;
}

clmfit_status clmfit_config_set_threads(clmfit_config* config, int threads)
{
    if (!config) {
        return null_argument("config");
    }
    if (threads < 1) {
        last_error = "threads must be at least 1";
        return CLMFIT_ERR_VALIDATION;
    }
    config->cfg.threads = threads;
    return CLMFIT_OK;
}

clmfit_status clmfit_config_set_reliability(clmfit_config* config, const char* path)
{
    if (!config) {
        return null_argument("config");
    }
    return guarded([&] {
        if (path) {
            config->reliability = io::load_reliability(path);
        } else {
            config->reliability.reset();
        }
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_fit(const clmfit_pdm* pdm, const clmfit_bank* bank, const clmfit_image* image,
                         const clmfit_config* config, const double bbox[4], int exhaustive, clmfit_result** out)
{
    if (!pdm || !bank || !image || !config || !bbox || !out) {
        return null_argument("pdm/bank/image/config/bbox/out");
    }
    return guarded([&] {
        const BoundingBox box{bbox[0], bbox[1], bbox[2], bbox[3]};
        if (!(box.width > 0.0) || !(box.height > 0.0)) {
            fail(ErrorKind::validation, "bbox width and height must be positive");
        }
        const int n = pdm->model.n_landmarks();
        const LandmarkReliability reliability =
            config->reliability ? *config->reliability : LandmarkReliability::uniform(n);
        check_bank_for_fit(bank->bank, n, config->cfg);
        const CenBankSource source(bank->bank, image->image);
        FitResult r = multi_hypothesis_fit(pdm->model, source, box, config->cfg, reliability, exhaustive != 0);
        log(CLMFIT_LOG_INFO, "fit: hypothesis " + std::to_string(r.hypothesis) + " of "
                                 + std::to_string(r.hypotheses_evaluated) + " evaluated, MAP score "
                                 + io::format_double(r.map_score));
        const bool low = r.low_confidence;
        *out = new clmfit_result{std::move(r)};
        return low ? CLMFIT_LOW_CONFIDENCE : CLMFIT_OK;
    });
}

void clmfit_result_free(clmfit_result* result)
{
    delete result;
}

int clmfit_result_landmarks(const clmfit_result* result)
{
    return result ? static_cast<int>(result->result.landmarks.size()) : 0;
}

clmfit_status clmfit_result_landmark(const clmfit_result* result, int index, double* x, double* y, int* visible)
{
    if (!result || !x || !y || !visible) {
        return null_argument("result/x/y/visible");
    }
    if (index < 0 || index >= static_cast<int>(result->result.landmarks.size())) {
        last_error = "landmark index out of range";
        return CLMFIT_ERR_VALIDATION;
    }
    *x = result->result.landmarks.points[index].x();
    *y = result->result.landmarks.points[index].y();
    *visible = result->result.landmarks.visible[index] ? 1 : 0;
    return CLMFIT_OK;
}

double clmfit_result_map_score(const clmfit_result* result)
{
    return result ? result->result.map_score : 0.0;
}

int clmfit_result_iterations(const clmfit_result* result)
{
    return result ? result->result.total_iterations() : 0;
}

int clmfit_result_hypotheses(const clmfit_result* result)
{
    return result ? result->result.hypotheses_evaluated : 0;
}

int clmfit_result_low_confidence(const clmfit_result* result)
{
    return result && result->result.low_confidence ? 1 : 0;
}

clmfit_status clmfit_result_save_csv(const clmfit_result* result, const char* path)
{
    if (!result || !path) {
        return null_argument("result/path");
    }
    return guarded([&] {
        io::save_fit_csv(result->result, path);
        return CLMFIT_OK;
    });
}

void clmfit_synth_options_default(clmfit_synth_options* options)
{
    if (!options) {
        return;
    }
    const SceneSampling d;
    *options = clmfit_synth_options{1,           0,           d.width,    d.height,  d.iod_px,
                                    d.scale_jitter, d.yaw_deg, d.pitch_deg, d.roll_deg, d.nonrigid_fraction};
}

clmfit_status clmfit_synth(const clmfit_pdm* pdm, const clmfit_synth_options* options, const char* out_dir)
{
    if (!pdm || !options || !out_dir) {
        return null_argument("pdm/options/out_dir");
    }
    return guarded([&] {
        if (options->count < 0) {
            fail(ErrorKind::validation, "count must be non-negative");
        }
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec || !fs::is_directory(out_dir)) {
            fail(ErrorKind::io, std::string("cannot create output directory ") + out_dir);
        }
        SceneSampling sampling;
        sampling.width = options->width;
        sampling.height = options->height;
        sampling.iod_px = options->iod_px;
        sampling.scale_jitter = options->scale_jitter;
        sampling.yaw_deg = options->yaw_deg;
        sampling.pitch_deg = options->pitch_deg;
        sampling.roll_deg = options->roll_deg;
        sampling.nonrigid_fraction = options->nonrigid_fraction;
        std::mt19937_64 rng(options->seed);
        for (int k = 0; k < options->count; ++k) {
            const PdmParams params = sample_scene_params(pdm->model, sampling, rng);
            const std::uint64_t scene_seed = rng();
            const SyntheticScene scene =
                render_scene(pdm->model, params, sampling.width, sampling.height, scene_seed);
            const fs::path base = fs::path(out_dir) / scene_stem(k);
            io::save_scene(scene, pdm->model, fs::path(base).replace_extension(".pgm"),
                           fs::path(base).replace_extension(".json"));
            log(CLMFIT_LOG_DEBUG, "synth: wrote " + base.string());
        }
        return CLMFIT_OK;
    });
}

void clmfit_train_options_default(clmfit_train_options* options)
{
    if (!options) {
        return;
    }
    const TrainConfig t;
    const PatchSpec p;
    *options = clmfit_train_options{};
    options->learning_rate = t.learning_rate;
    options->epochs = t.epochs;
    options->batch_size = t.batch_size;
    options->label_sigma = t.label_sigma;
    options->seed = t.seed;
    options->enforce_nonneg = 1;
    options->correlation = kToyArch.correlation;
    options->hidden = kToyArch.hidden;
    options->experts = kToyArch.experts;
    options->roi_size = p.roi_size;
    options->max_offset = p.max_offset;
    options->scale_px = 60;
    options->test_fraction = 0.2;
    options->samples = 500;
    options->test_samples = 200;
    options->bank_landmarks = 0;
    options->reference_iod_px = SceneSampling{}.iod_px;
}

clmfit_status clmfit_train(const char* data_dir, const clmfit_train_options* options, const char* model_out,
                           const char* loss_csv, const char* bank_dir, clmfit_train_report* report)
{
    if (!options || !model_out) {
        return null_argument("options/model_out");
    }
    return guarded([&] {
        TrainConfig cfg;
        cfg.learning_rate = options->learning_rate;
        cfg.epochs = options->epochs;
        cfg.batch_size = options->batch_size;
        cfg.label_sigma = options->label_sigma;
        cfg.seed = options->seed;
        cfg.enforce_nonneg = options->enforce_nonneg != 0;
        validate(cfg);
        const CenArch arch{options->correlation, options->hidden, options->experts};
        PatchSpec spec;
        spec.roi_size = options->roi_size;
        spec.max_offset = options->max_offset;
        if (options->scale_px < 1) {
            fail(ErrorKind::validation, "scale_px must be positive");
        }

        PatchDataset train;
        PatchDataset test;
        test.split = Split::test;
        int landmarks = options->bank_landmarks;
        if (data_dir) {
            const auto sidecars = list_sidecars(data_dir);
            if (sidecars.empty()) {
                fail(ErrorKind::validation, std::string("no scenes found in ") + data_dir);
            }
            if (!(options->test_fraction >= 0.0 && options->test_fraction < 1.0)) {
                fail(ErrorKind::validation, "test_fraction must lie in [0, 1)");
            }
            auto n_test = static_cast<std::size_t>(options->test_fraction * sidecars.size());
            if (options->test_fraction > 0.0 && sidecars.size() >= 2) {
                n_test = std::max<std::size_t>(n_test, 1);
            }
            std::mt19937_64 rng(cfg.seed);
            for (std::size_t k = 0; k < sidecars.size(); ++k) {
                fs::path pgm = sidecars[k];
                pgm.replace_extension(".pgm");
                const SyntheticScene scene = io::load_scene(sidecars[k], pgm);
                const auto ref_length = io::load_sidecar_reference_length(sidecars[k]);
                if (!ref_length) {
                    fail(ErrorKind::validation, sidecars[k].string() + ": missing reference_length");
                }
                if (landmarks == 0) {
                    landmarks = static_cast<int>(scene.true_landmarks.size());
                }
                PatchDataset& into = k + n_test < sidecars.size() ? train : test;
                append_scene_patches(into, scene, *ref_length, options->scale_px, spec, cfg.label_sigma, rng);
            }
        } else {
            if (!(options->reference_iod_px > 0.0)) {
                fail(ErrorKind::validation, "reference_iod_px must be positive");
            }
            spec.look.feature_radius *= options->scale_px / options->reference_iod_px;
            train = gen_synthetic_patches(cfg, options->samples, spec, Split::train);
            test = gen_synthetic_patches(cfg, options->test_samples, spec, Split::test);
            if (landmarks == 0) {
                landmarks = 1;
            }
        }
        log(CLMFIT_LOG_INFO, "train: " + std::to_string(train.size()) + " training and "
                                 + std::to_string(test.size()) + " test patches");

        TrainResult trained = train_cen(train, test, cfg, arch);
        trained.model.scale_px = options->scale_px;
        for (const auto& e : trained.curve) {
            log(CLMFIT_LOG_DEBUG, "train: epoch " + std::to_string(e.epoch) + " loss "
                                      + io::format_double(e.train_loss));
        }
        io::save_cen(trained.model, model_out);
        if (loss_csv) {
            save_loss_csv(trained.curve, loss_csv);
        }
        if (bank_dir) {
            std::optional<CenBank> previous;
            if (fs::exists(fs::path(bank_dir) / "manifest.json")) {
                previous = io::load_bank(bank_dir, true);
            }
            std::vector<int> scales = previous ? previous->scales() : std::vector<int>{};
            if (std::find(scales.begin(), scales.end(), options->scale_px) == scales.end()) {
                scales.push_back(options->scale_px);
                std::sort(scales.begin(), scales.end());
            }
            CenBank bank(previous ? previous->stored_views_deg() : std::vector<double>{0.0}, scales,
                         previous ? previous->mirror_landmarks() : std::vector<int>{});
            if (previous) {
                for (const auto& m : previous->stored_models()) {
                    bank.add(*m);
                }
                for (const auto& [view, hidden] : previous->occlusions()) {
                    bank.set_occluded(view, hidden);
                }
            }
            for (int l = 0; l < landmarks; ++l) {
                CenModel m = trained.model;
                m.landmark = l;
                m.view = 0;
                bank.add(std::move(m));
            }
            io::save_bank(bank, bank_dir);
        }
        if (report) {
            report->initial_loss = trained.curve.front().train_loss;
            report->final_loss = trained.curve.back().train_loss;
            report->test_r2 = trained.curve.back().test_r2;
            report->test_rmse = trained.curve.back().test_rmse;
            report->train_samples = static_cast<int>(train.size());
            report->test_samples = static_cast<int>(test.size());
        }
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_eval(const char* const* pred_paths, const char* const* truth_paths, size_t count,
                          const char* mode, const char* curve_csv, const char* report_json, double* median_error)
{
    if (!pred_paths || !truth_paths || !mode || !median_error) {
        return null_argument("pred_paths/truth_paths/mode/median_error");
    }
    return guarded([&] {
        const NormMode norm = parse_norm_mode(mode);
        if (count == 0) {
            fail(ErrorKind::validation, "no predictions to evaluate");
        }
        std::vector<double> errors;
        for (std::size_t k = 0; k < count; ++k) {
            const LandmarkSet pred = io::load_landmarks_csv(pred_paths[k]);
            const LandmarkSet truth = io::load_sidecar_landmarks(truth_paths[k]);
            const auto eyes = io::load_sidecar_eye_corners(truth_paths[k]);
            errors.push_back(normalized_error(pred, truth, norm, eyes));
        }
        const double top = std::max(*std::max_element(errors.begin(), errors.end()), 0.1);
        const ErrorReport report = make_report(errors, linear_thresholds(top, 101), norm);
        if (curve_csv) {
            save_curve_csv(report.curve, curve_csv);
        }
        if (report_json) {
            save_report_json(report, report_json);
        }
        *median_error = report.median;
        return CLMFIT_OK;
    });
}

clmfit_status clmfit_self_check(const clmfit_pdm* pdm, const char* const* sidecar_paths, size_t count,
                                double tolerance, size_t* failures)
{
    if (!pdm || !sidecar_paths || !failures) {
        return null_argument("pdm/sidecar_paths/failures");
    }
    return guarded([&] {
        std::size_t bad = 0;
        for (std::size_t k = 0; k < count; ++k) {
            const SyntheticScene scene = io::load_scene(sidecar_paths[k]);
            if (scene.true_params.nonrigid.size() != pdm->model.n_modes()
                || scene.true_landmarks.size() != static_cast<std::size_t>(pdm->model.n_landmarks())) {
                log(CLMFIT_LOG_WARN, std::string("self-check: shape mismatch in ") + sidecar_paths[k]);
                ++bad;
                continue;
            }
            const LandmarkSet expected = shape_from_params(pdm->model, scene.true_params);
            double worst = 0.0;
            for (std::size_t i = 0; i < expected.size(); ++i) {
                worst = std::max(worst, (expected.points[i] - scene.true_landmarks.points[i]).norm());
            }
            if (!(worst <= tolerance)) {
                log(CLMFIT_LOG_WARN, std::string("self-check: ") + sidecar_paths[k] + " deviates by "
                                         + io::format_double(worst) + " px");
                ++bad;
            }
        }
        *failures = bad;
        return CLMFIT_OK;
    });
}

} // extern "C"
