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

// Command-line front end. Everything goes through the C API in libclmfit.

#include "clmfit/clmfit.h"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Globals {
    std::uint64_t seed = 0;
    int threads = 1;
    int verbose = 0;
};

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using PdmPtr = std::unique_ptr<clmfit_pdm, Deleter<clmfit_pdm, clmfit_pdm_free>>;
using BankPtr = std::unique_ptr<clmfit_bank, Deleter<clmfit_bank, clmfit_bank_free>>;
using ImagePtr = std::unique_ptr<clmfit_image, Deleter<clmfit_image, clmfit_image_free>>;
using ConfigPtr = std::unique_ptr<clmfit_config, Deleter<clmfit_config, clmfit_config_free>>;
using ResultPtr = std::unique_ptr<clmfit_result, Deleter<clmfit_result, clmfit_result_free>>;

// Thrown to leave a subcommand with a given exit code after reporting.
struct Exit {
    int code;
};

void check(clmfit_status status, const char* what)
{
    if (status != CLMFIT_OK && status != CLMFIT_LOW_CONFIDENCE) {
        spdlog::error("{}: {}", what, clmfit_last_error());
        throw Exit{static_cast<int>(status)};
    }
}

[[noreturn]] void usage_error(const std::string& message)
{
    spdlog::error("{}", message);
    throw Exit{CLMFIT_ERR_VALIDATION};
}

void forward_log(clmfit_log_level level, const char* message, void*)
{
    switch (level) {
    case CLMFIT_LOG_DEBUG:
        spdlog::debug("{}", message);
        break;
    case CLMFIT_LOG_INFO:
        spdlog::info("{}", message);
        break;
    case CLMFIT_LOG_WARN:
        spdlog::warn("{}", message);
        break;
    }
}

void setup_logging(int verbose)
{
    auto logger = spdlog::stderr_color_mt("clmfit");
    logger->set_pattern("%^%l%$: %v");
    spdlog::set_default_logger(logger);
    spdlog::level::level_enum level = spdlog::level::warn;
    if (const char* env = std::getenv("CLMFIT_LOG")) {
        level = spdlog::level::from_str(env);
    }
    if (verbose == 1) {
        level = std::min(level, spdlog::level::info);
    } else if (verbose >= 2) {
        level = spdlog::level::debug;
    }
    spdlog::set_level(level);
    clmfit_set_log_callback(forward_log, nullptr);
}

std::array<double, 4> parse_bbox(const std::string& text)
{
    std::array<double, 4> box{};
    std::stringstream in(text);
    std::string field;
    int k = 0;
    while (std::getline(in, field, ',')) {
        if (k == 4) {
            usage_error("--bbox: expected x,y,w,h but got '" + text + "'");
        }
        try {
            std::size_t used = 0;
            box[k] = std::stod(field, &used);
            if (used != field.size()) {
                throw std::invalid_argument(field);
            }
        } catch (const std::logic_error&) {
            usage_error("--bbox: '" + field + "' is not a number");
        }
        ++k;
    }
    if (k != 4) {
        usage_error("--bbox: expected x,y,w,h but got '" + text + "'");
    }
    if (!(box[2] > 0.0) || !(box[3] > 0.0)) {
        usage_error("--bbox: width and height must be positive");
    }
    return box;
}

std::array<int, 3> parse_arch(const std::string& text)
{
    std::array<int, 3> arch{};
    std::stringstream in(text);
    std::string field;
    int k = 0;
    while (std::getline(in, field, ',')) {
        if (k == 3) {
            usage_error("--arch: expected C,H,E channel counts but got '" + text + "'");
        }
        try {
            arch[k] = std::stoi(field);
        } catch (const std::logic_error&) {
            usage_error("--arch: '" + field + "' is not an integer");
        }
        if (arch[k] < 1) {
            usage_error("--arch: channel counts must be positive");
        }
        ++k;
    }
    if (k != 3) {
        usage_error("--arch: expected C,H,E channel counts but got '" + text + "'");
    }
    return arch;
}

// pdm --------------------------------------------------------------------

int run_pdm(int modes, const std::string& out, const Globals& g)
{
    clmfit_pdm* pdm_raw = nullptr;
    check(clmfit_pdm_face_layout(modes, g.seed, &pdm_raw), "pdm");
    PdmPtr pdm(pdm_raw);
    check(clmfit_pdm_save(pdm.get(), out.c_str()), "--out");
    std::printf("wrote %d-landmark model with %d modes to %s\n", clmfit_pdm_landmarks(pdm.get()),
                clmfit_pdm_modes(pdm.get()), out.c_str());
    return 0;
}

// fit --------------------------------------------------------------------

struct FitArgs {
    std::string pdm, bank, image, bbox, out, config, reliability;
    bool exhaustive = false;
    bool allow_ablation = false;
};

int run_fit(const FitArgs& a, const Globals& g)
{
    const auto box = parse_bbox(a.bbox);
    clmfit_pdm* pdm_raw = nullptr;
    check(clmfit_pdm_load(a.pdm.c_str(), &pdm_raw), "--pdm");
    PdmPtr pdm(pdm_raw);
    clmfit_bank* bank_raw = nullptr;
    check(clmfit_bank_load(a.bank.c_str(), a.allow_ablation ? 1 : 0, &bank_raw), "--bank");
    BankPtr bank(bank_raw);
    clmfit_image* image_raw = nullptr;
    check(clmfit_image_load_pgm(a.image.c_str(), &image_raw), "--image");
    ImagePtr image(image_raw);
    clmfit_config* cfg_raw = nullptr;
    if (a.config.empty()) {
        check(clmfit_config_default(&cfg_raw), "config");
    } else {
        check(clmfit_config_load(a.config.c_str(), &cfg_raw), "--config");
    }
    ConfigPtr cfg(cfg_raw);
    check(clmfit_config_set_threads(cfg.get(), g.threads), "--threads");
    if (!a.reliability.empty()) {
        check(clmfit_config_set_reliability(cfg.get(), a.reliability.c_str()), "--reliability");
    }

    clmfit_result* result_raw = nullptr;
    const clmfit_status status =
        clmfit_fit(pdm.get(), bank.get(), image.get(), cfg.get(), box.data(), a.exhaustive ? 1 : 0, &result_raw);
    check(status, "fit");
    ResultPtr result(result_raw);
    check(clmfit_result_save_csv(result.get(), a.out.c_str()), "--out");
    std::printf("map_score=%.6f hypotheses=%d iterations=%d low_confidence=%d\n",
                clmfit_result_map_score(result.get()), clmfit_result_hypotheses(result.get()),
                clmfit_result_iterations(result.get()), clmfit_result_low_confidence(result.get()));
    if (status == CLMFIT_LOW_CONFIDENCE) {
        spdlog::warn("fit: low-confidence result");
    }
    return static_cast<int>(status);
}

// synth ------------------------------------------------------------------

struct SynthArgs {
    std::string pdm, out;
    clmfit_synth_options opts{};
};

int run_synth(SynthArgs a, const Globals& g)
{
    clmfit_pdm* pdm_raw = nullptr;
    check(clmfit_pdm_load(a.pdm.c_str(), &pdm_raw), "--pdm");
    PdmPtr pdm(pdm_raw);
    a.opts.seed = g.seed;
    check(clmfit_synth(pdm.get(), &a.opts, a.out.c_str()), "synth");
    std::printf("wrote %d scenes to %s\n", a.opts.count, a.out.c_str());
    return 0;
}

// train ------------------------------------------------------------------

struct TrainArgs {
    std::string data, arch = "16,8,6", out, loss_csv, bank_dir;
    bool no_nonneg = false;
    clmfit_train_options opts{};
};

int run_train(TrainArgs a, const Globals& g)
{
    const auto arch = parse_arch(a.arch);
    a.opts.correlation = arch[0];
    a.opts.hidden = arch[1];
    a.opts.experts = arch[2];
    a.opts.enforce_nonneg = a.no_nonneg ? 0 : 1;
    a.opts.seed = g.seed;
    if (a.loss_csv.empty()) {
        a.loss_csv = a.out + ".loss.csv";
    }
    clmfit_train_report report{};
    check(clmfit_train(a.data.empty() ? nullptr : a.data.c_str(), &a.opts, a.out.c_str(), a.loss_csv.c_str(),
                       a.bank_dir.empty() ? nullptr : a.bank_dir.c_str(), &report),
          "train");
    std::printf("train_samples=%d test_samples=%d initial_loss=%.6f final_loss=%.6f\n", report.train_samples,
                report.test_samples, report.initial_loss, report.final_loss);
    std::printf("r2=%.6f rmse=%.6f\n", report.test_r2, report.test_rmse);
    return 0;
}

// eval -------------------------------------------------------------------

struct EvalArgs {
    std::vector<std::string> pred, truth;
    std::string mode = "iod", curve, report, pdm;
    bool self_check = false;
    double tolerance = 1e-9;
};

std::vector<const char*> c_strings(const std::vector<std::string>& v)
{
    std::vector<const char*> out;
    for (const auto& s : v) {
        out.push_back(s.c_str());
    }
    return out;
}

int run_eval(const EvalArgs& a)
{
    const auto truth = c_strings(a.truth);
    if (a.self_check) {
        if (a.pdm.empty()) {
            usage_error("--self-check requires --pdm");
        }
        clmfit_pdm* pdm_raw = nullptr;
        check(clmfit_pdm_load(a.pdm.c_str(), &pdm_raw), "--pdm");
        PdmPtr pdm(pdm_raw);
        std::size_t failures = 0;
        check(clmfit_self_check(pdm.get(), truth.data(), truth.size(), a.tolerance, &failures), "self-check");
        std::printf("self_check: %zu of %zu sidecars pass\n", truth.size() - failures, truth.size());
        return failures == 0 ? 0 : CLMFIT_ERR_VALIDATION;
    }
    if (a.pred.size() != a.truth.size()) {
        usage_error("--pred and --truth must be given the same number of times");
    }
    if (a.pred.empty()) {
        usage_error("eval needs at least one --pred/--truth pair");
    }
    const auto pred = c_strings(a.pred);
    double median = 0.0;
    check(clmfit_eval(pred.data(), truth.data(), pred.size(), a.mode.c_str(),
                      a.curve.empty() ? nullptr : a.curve.c_str(), a.report.empty() ? nullptr : a.report.c_str(),
                      &median),
          "eval");
    std::printf("median_error=%.6g count=%zu mode=%s\n", median, pred.size(), a.mode.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Constrained local model landmark fitting with convolutional experts"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for per-landmark response maps")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_flag("-v,--verbose", g.verbose, "More log output (repeatable); CLMFIT_LOG sets the base level");

    int pdm_modes = 6;
    std::string pdm_out;
    auto* pdm_cmd = app.add_subcommand("pdm", "Write the built-in 12-landmark face shape model");
    pdm_cmd->add_option("--modes", pdm_modes, "Number of shape modes")->capture_default_str();
    pdm_cmd->add_option("--out", pdm_out, "Output JSON")->required();

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the shape model to a PGM image");
    fit_cmd->add_option("--pdm", fit.pdm, "Shape model JSON")->required();
    fit_cmd->add_option("--bank", fit.bank, "Detector bank directory or manifest")->required();
    fit_cmd->add_option("--image", fit.image, "Grayscale PGM image")->required();
    fit_cmd->add_option("--bbox", fit.bbox, "Face box x,y,w,h")->required();
    fit_cmd->add_option("--out", fit.out, "Output landmark CSV")->required();
    fit_cmd->add_option("--config", fit.config, "Fitting configuration JSON");
    fit_cmd->add_option("--reliability", fit.reliability, "Per-landmark reliability JSON array");
    fit_cmd->add_flag("--exhaustive", fit.exhaustive, "Evaluate every initial orientation");
    fit_cmd->add_flag("--allow-ablation", fit.allow_ablation, "Accept detectors with negative combiner weights");

    SynthArgs synth;
    clmfit_synth_options_default(&synth.opts);
    auto* synth_cmd = app.add_subcommand("synth", "Render synthetic scenes with ground truth");
    synth_cmd->add_option("--pdm", synth.pdm, "Shape model JSON")->required();
    synth_cmd->add_option("--count", synth.opts.count, "Number of scenes")->required()->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--width", synth.opts.width, "Image width")->capture_default_str();
    synth_cmd->add_option("--height", synth.opts.height, "Image height")->capture_default_str();
    synth_cmd->add_option("--iod", synth.opts.iod_px, "Face size in pixels per model reference length")
        ->capture_default_str();
    synth_cmd->add_option("--scale-jitter", synth.opts.scale_jitter, "Relative scale jitter")->capture_default_str();
    synth_cmd->add_option("--yaw", synth.opts.yaw_deg, "Yaw range in degrees")->capture_default_str();
    synth_cmd->add_option("--pitch", synth.opts.pitch_deg, "Pitch range in degrees")->capture_default_str();
    synth_cmd->add_option("--roll", synth.opts.roll_deg, "Roll range in degrees")->capture_default_str();
    synth_cmd->add_option("--nonrigid", synth.opts.nonrigid_fraction, "Shape mode spread in standard deviations")
        ->capture_default_str();

    TrainArgs train;
    clmfit_train_options_default(&train.opts);
    train.opts.epochs = 20;
    train.opts.batch_size = 64;
    auto* train_cmd = app.add_subcommand("train", "Train a toy convolutional experts detector");
    train_cmd->add_option("--data", train.data, "Directory of synthetic scenes (default: rendered patches)");
    train_cmd->add_option("--arch", train.arch, "Channel counts C,H,E")->capture_default_str();
    train_cmd->add_option("--out", train.out, "Output model JSON")->required();
    train_cmd->add_option("--loss-csv", train.loss_csv, "Loss curve CSV (default: <out>.loss.csv)");
    train_cmd->add_option("--bank-dir", train.bank_dir, "Create or extend a frontal bank with this model at --scale");
    train_cmd->add_option("--bank-landmarks", train.opts.bank_landmarks, "Landmarks in the written bank");
    train_cmd->add_flag("--no-nonneg", train.no_nonneg, "Ablation: leave combiner weights unconstrained");
    train_cmd->add_option("--epochs", train.opts.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--lr", train.opts.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--batch", train.opts.batch_size, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--label-sigma", train.opts.label_sigma, "Label Gaussian std (px)")->capture_default_str();
    train_cmd->add_option("--roi", train.opts.roi_size, "Training ROI size")->capture_default_str();
    train_cmd->add_option("--max-offset", train.opts.max_offset, "Landmark offset range (px)")->capture_default_str();
    train_cmd->add_option("--scale", train.opts.scale_px, "Detector scale (px per reference length)")
        ->capture_default_str();
    train_cmd->add_option("--reference-iod", train.opts.reference_iod_px,
                          "Face size the rendered patches are drawn for (px)")
        ->capture_default_str();
    train_cmd->add_option("--samples", train.opts.samples, "Rendered training patches")->capture_default_str();
    train_cmd->add_option("--test-samples", train.opts.test_samples, "Rendered test patches")->capture_default_str();
    train_cmd->add_option("--test-fraction", train.opts.test_fraction, "Scenes held out for testing")
        ->capture_default_str();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Normalized landmark errors against ground truth");
    eval_cmd->add_option("--pred", eval.pred, "Fit CSV (repeatable)");
    eval_cmd->add_option("--truth", eval.truth, "Scene sidecar JSON (repeatable)");
    eval_cmd->add_option("--mode", eval.mode, "iod or size")->check(CLI::IsMember({"iod", "size"}))
        ->capture_default_str();
    eval_cmd->add_option("--curve", eval.curve, "Cumulative error curve CSV");
    eval_cmd->add_option("--report", eval.report, "Report JSON");
    eval_cmd->add_flag("--self-check", eval.self_check, "Re-derive sidecar landmarks from their parameters");
    eval_cmd->add_option("--pdm", eval.pdm, "Shape model for --self-check");
    eval_cmd->add_option("--tolerance", eval.tolerance, "Self-check tolerance (px)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return CLMFIT_ERR_VALIDATION;
    }

    setup_logging(g.verbose);
    try {
        if (*pdm_cmd) {
            return run_pdm(pdm_modes, pdm_out, g);
        }
        if (*fit_cmd) {
            return run_fit(fit, g);
        }
        if (*synth_cmd) {
            return run_synth(synth, g);
        }
        if (*train_cmd) {
            return run_train(train, g);
        }
        return run_eval(eval);
    } catch (const Exit& e) {
        return e.code;
    }
}
