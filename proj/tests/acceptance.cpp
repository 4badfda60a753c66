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
// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// when any criterion fails.

#include "support.hpp"

#include "clmfit/bank.hpp"
#include "clmfit/cen.hpp"
#include "clmfit/metrics.hpp"
#include "clmfit/nurlms.hpp"
#include "clmfit/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

using namespace clmfit;
using namespace clmfit::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome jacobian_check()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> points(3, 68);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const int n = points(rng);
        // An orthonormal basis over 3n coordinates has at most 3n columns.
        std::uniform_int_distribution<int> modes(2, std::min(10, 3 * n));
        const PdmModel model = random_pdm(n, modes(rng), rng());
        const PdmParams p = random_params(model, rng);
        const Eigen::MatrixXd fd = fd_jacobian(model, p);
        worst = std::max(worst, frobenius(jacobian(model, p) - fd) / frobenius(fd));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 10.0, fmt("max relative error %.2e, %.2f s", worst, secs)};
}

Outcome forward_oracle()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> size(11, 29);
    std::uniform_int_distribution<int> ch(1, 16);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const CenModel m = random_cen({ch(rng), ch(rng), ch(rng)}, rng);
        const Eigen::MatrixXd roi = random_roi(size(rng), rng);
        worst = std::max(worst, (response_map(roi, m).values - naive_response(roi, m)).cwiseAbs().maxCoeff());
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-9 && secs < 10.0, fmt("max abs difference %.2e, %.2f s", worst, secs)};
}

Outcome affine_invariance()
{
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> a(0.01, 50.0);
    std::uniform_real_distribution<double> b(-1000.0, 1000.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const CenModel m = random_cen(kToyArch, rng);
        const Eigen::MatrixXd roi = random_roi(19, rng);
        const Eigen::MatrixXd moved = (a(rng) * roi).array() + b(rng);
        worst = std::max(worst, (response_map(moved, m).values - response_map(roi, m).values).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-9, fmt("max abs difference %.2e", worst)};
}

Outcome mean_shift_oracle()
{
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double rho = 1.85 * 1.85;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int size = 5 + trial % 17;
        ResponseMap map;
        map.values.resize(size, size);
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                map.values(r, c) = u(rng);
            }
        }
        map.origin = Vec2(20.0 * u(rng), 20.0 * u(rng));
        const Vec2 x = map.origin + Vec2(size * u(rng), size * u(rng));
        const auto v = mean_shift(map, x, rho);
        worst = std::max(worst, v ? (*v - direct_mean_shift(map, x, rho)).norm() : 1e300);
    }
    double far = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Vec2 truth(30.0 + 8.0 * u(rng) - 4.0, 30.0 + 8.0 * u(rng) - 4.0);
        RoiRequest req;
        req.roi_size = 25;
        req.center_ref = Vec2(30.0, 30.0);
        const ResponseMap map = oracle_response(truth, req, 0.75 + 1.5 * u(rng));
        Vec2 x = req.map_origin() + Vec2(14.0 * u(rng), 14.0 * u(rng));
        for (int it = 0; it < 1000; ++it) {
            const auto v = mean_shift(map, x, rho);
            if (!v) {
                break;
            }
            x += *v;
            if (v->norm() < 1e-9) {
                break;
            }
        }
        far = std::max(far, (x - truth).norm());
    }
    return {worst < 1e-10 && far < 0.1,
            fmt("max difference from direct KDE %.2e, worst converged distance %.3f px", worst, far)};
}

Outcome update_oracle()
{
    std::mt19937_64 rng(505);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> c(0.2, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const PdmModel model = random_pdm(4, 2, 900 + trial);
        const PdmParams p = random_params(model, rng);
        Eigen::VectorXd v(8);
        for (int i = 0; i < 8; ++i) {
            v(i) = 3.0 * g(rng);
        }
        LandmarkReliability rel = LandmarkReliability::uniform(4);
        for (int i = 0; i < 4; ++i) {
            rel.c(i) = c(rng);
        }
        NurlmsConfig cfg;
        const Eigen::VectorXd step = update_step(model, p, v, rel, std::vector<bool>(4, true), cfg);
        const Eigen::MatrixXd jac = jacobian(model, p);
        const Eigen::VectorXd packed = p.to_vector();
        auto objective = [&](const Eigen::VectorXd& d) {
            double f = 0.0;
            for (int i = 0; i < 4; ++i) {
                for (int axis = 0; axis < 2; ++axis) {
                    const double res = v(axis * 4 + i) - jac.row(axis * 4 + i).dot(d);
                    f += cfg.weight * rel.c(i) * res * res;
                }
            }
            for (int j = 0; j < 2; ++j) {
                const double q = packed(kRigidParams + j) + d(kRigidParams + j);
                f += cfg.reg * q * q / model.eigenvalues(j);
            }
            return f;
        };
        worst = std::max(worst, (step - brute_force_minimizer(objective, model.n_params())).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-6, fmt("max abs difference %.2e", worst)};
}

// Oracle maps as sharp as the training labels.
constexpr double kOracleSigma = 1.0;

Outcome oracle_recovery()
{
    const auto t0 = Clock::now();
    const PdmModel model = face_layout_pdm(6, 7);
    SceneSampling sampling;
    sampling.yaw_deg = 15.0;
    const auto cases = make_scenes(model, sampling, 50, 42);
    const NurlmsConfig cfg;
    std::vector<double> errors;
    for (const auto& sc : cases) {
        const OracleSource source(sc.scene.true_landmarks, kOracleSigma);
        const FitResult r = multi_hypothesis_fit(model, source, sc.init_box, cfg,
                                                 LandmarkReliability::uniform(model.n_landmarks()));
        errors.push_back(normalized_error(r.landmarks, sc.scene.true_landmarks, NormMode::iod, model.eye_corners));
    }
    const double med = median(errors);
    const double secs = seconds_since(t0);
    return {med < 0.01 && secs < 60.0, fmt("median error %.5f over %zu scenes, %.2f s", med, errors.size(), secs)};
}

Outcome trained_end_to_end()
{
    const auto t0 = Clock::now();
    const PdmModel model = face_layout_pdm(6, 7);
    std::vector<double> r2;
    const CenBank bank = train_toy_bank(model.n_landmarks(), {30, 60}, 1, &r2);
    SceneSampling sampling;
    sampling.yaw_deg = 15.0;
    const auto cases = make_scenes(model, sampling, 20, 42);
    const NurlmsConfig cfg;
    std::vector<double> errors;
    for (const auto& sc : cases) {
        const CenBankSource source(bank, sc.scene.image);
        const FitResult r = multi_hypothesis_fit(model, source, sc.init_box, cfg,
                                                 LandmarkReliability::uniform(model.n_landmarks()));
        errors.push_back(normalized_error(r.landmarks, sc.scene.true_landmarks, NormMode::iod, model.eye_corners));
    }
    const double med = median(errors);
    return {med < 0.05, fmt("median error %.5f over %zu scenes (detector r2 %.3f, %.3f), %.2f s", med,
                            errors.size(), r2[0], r2[1], seconds_since(t0))};
}

Outcome gradient_check()
{
    TrainConfig cfg;
    cfg.seed = 808;
    PatchSpec spec;
    spec.roi_size = 15;
    const PatchDataset data = gen_synthetic_patches(cfg, 6, spec);
    std::vector<Eigen::MatrixXd> windows;
    for (const auto& s : data.samples) {
        windows.push_back(normalized_windows(s.roi));
    }
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    CenModel m = init_cen({4, 3, 3}, 808);
    const LossGradient lg = loss_and_gradient(m, windows, data, idx);
    auto slots = parameter_slots(m);
    CenModel grad = lg.gradient;
    const auto analytic = parameter_slots(grad);
    double diff = 0.0;
    double norm = 0.0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const double keep = *slots[k];
        *slots[k] = keep + h;
        const double up = loss_and_gradient(m, windows, data, idx).loss;
        *slots[k] = keep - h;
        const double down = loss_and_gradient(m, windows, data, idx).loss;
        *slots[k] = keep;
        const double fd = (up - down) / (2.0 * h);
        diff += (fd - *analytic[k]) * (fd - *analytic[k]);
        norm += fd * fd;
    }
    const double rel = std::sqrt(diff / norm);
    return {rel < 1e-4, fmt("relative error %.2e over %zu parameters", rel, slots.size())};
}

Outcome ablation_direction()
{
    const auto t0 = Clock::now();
    std::vector<double> constrained, free;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (bool nonneg : {true, false}) {
            const TrainConfig cfg = toy_train_config(seed, nonneg);
            const PatchDataset train = gen_synthetic_patches(cfg, 500);
            const PatchDataset test = gen_synthetic_patches(cfg, 300, {}, Split::test);
            const TrainResult r = train_cen(train, test, cfg);
            (nonneg ? constrained : free).push_back(r.curve.back().test_r2);
        }
    }
    const double a = median(constrained);
    const double b = median(free);
    return {a >= b, fmt("median test r2 %.4f non-negative vs %.4f unconstrained, %.2f s", a, b, seconds_since(t0))};
}

Outcome early_stopping()
{
    const PdmModel model = face_layout_pdm(6, 7);
    SceneSampling sampling;
    sampling.yaw_deg = 0.0;
    const auto cases = make_scenes(model, sampling, 50, 4242);
    NurlmsConfig cfg;
    // Every hypothesis runs to its fixed point.
    cfg.max_iters = 200;
    cfg.convergence_tol = 1e-10;
    int good = 0;
    double early_total = 0.0;
    double full_total = 0.0;
    for (const auto& sc : cases) {
        const OracleSource source(sc.scene.true_landmarks, kOracleSigma);
        const auto rel = LandmarkReliability::uniform(model.n_landmarks());
        const FitResult early = multi_hypothesis_fit(model, source, sc.init_box, cfg, rel, false);
        const FitResult full = multi_hypothesis_fit(model, source, sc.init_box, cfg, rel, true);
        early_total += early.hypotheses_evaluated;
        full_total += full.hypotheses_evaluated;
        good += early.hypotheses_evaluated < full.hypotheses_evaluated
            && landmark_rms(early.landmarks, full.landmarks) < 1e-6;
    }
    return {good >= 45, fmt("%d of 50 scenes cheaper and identical (mean hypotheses %.2f vs %.2f)", good,
                            early_total / 50.0, full_total / 50.0)};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const fs::path& dir, const std::string& args)
{
    const std::string cmd = "cd '" + dir.string() + "' && '" CLMFIT_CLI_PATH "' --seed 5 --threads 1 " + args
        + " >>stdout.txt 2>/dev/null";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// Every regular file below `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), dir).string()] = slurp(e.path());
        }
    }
    return out;
}

Outcome cli_determinism()
{
    const fs::path root = scratch_dir("determinism");
    const std::vector<std::pair<std::string, std::string>> steps{
        {"pdm", "pdm --modes 6 --out pdm.json"},
        {"synth", "synth --pdm pdm.json --count 3 --out scenes"},
        {"train", "train --data scenes --out model.json --epochs 3 --bank-dir bank"},
        {"fit", "fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --out fit.csv"},
        {"eval", "eval --pred fit.csv --truth scenes/scene_0000.json --curve curve.csv --report report.json"},
    };
    std::map<std::string, std::string> first;
    std::string detail;
    bool ok = true;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        fs::create_directories(dir);
        for (const auto& [name, args] : steps) {
            const int code = run_cli(dir, args);
            if (code != 0 && code != 2) {
                ok = false;
                detail += name + " exited " + std::to_string(code) + "; ";
            }
        }
        const auto snap = snapshot(dir);
        if (run == 0) {
            first = snap;
        } else if (snap != first) {
            ok = false;
            for (const auto& [file, bytes] : snap) {
                if (!first.count(file) || first.at(file) != bytes) {
                    detail += file + " differs; ";
                }
            }
        }
    }
    const std::size_t files = first.size();
    fs::remove_all(root);
    return {ok, detail.empty() ? fmt("%zu output files byte-identical across two runs of %zu subcommands", files,
                                     steps.size())
                               : detail};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"jacobian matches finite differences", jacobian_check},
        {"response map matches sliding-window oracle", forward_oracle},
        {"intensity-affine invariance", affine_invariance},
        {"mean shift oracle", mean_shift_oracle},
        {"update rule oracle", update_oracle},
        {"closed-loop recovery with oracle detectors", oracle_recovery},
        {"end-to-end with trained detectors", trained_end_to_end},
        {"training gradient check", gradient_check},
        {"non-negative combiner ablation direction", ablation_direction},
        {"early-stopping economy", early_stopping},
        {"CLI determinism", cli_determinism},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
