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
#pragma once

// Reference implementations and scene harness shared by the unit tests and
// the acceptance binary. The oracles are deliberately naive scalar code.

#include "clmfit/metrics.hpp"
#include "clmfit/nurlms.hpp"
#include "clmfit/pdm.hpp"
#include "clmfit/rotation.hpp"
#include "clmfit/synth.hpp"
#include "clmfit/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace clmfit::testing {

inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path()
        / ("clmfit_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double frobenius(const Eigen::MatrixXd& m)
{
    double s = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            s += m(r, c) * m(r, c);
        }
    }
    return std::sqrt(s);
}

/// Random parameters with |w| < pi/2.
inline PdmParams random_params(const PdmModel& model, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    PdmParams p = PdmParams::neutral(model);
    p.scale = 20.0 + 80.0 * (0.5 + 0.5 * u(rng));
    p.translation = Vec2(100.0 * u(rng), 100.0 * u(rng));
    Vec3 axis(g(rng), g(rng), g(rng));
    axis.normalize();
    p.rotation = axis * (1.5 * (0.5 + 0.5 * u(rng)));
    for (int j = 0; j < model.n_modes(); ++j) {
        p.nonrigid(j) = std::sqrt(model.eigenvalues(j)) * g(rng);
    }
    return p;
}

/// Central differences of shape_from_params through apply_update, stacked [x..., y...].
inline Eigen::MatrixXd fd_jacobian(const PdmModel& model, const PdmParams& params, double h = 1e-6)
{
    const int n = model.n_landmarks();
    const int k = model.n_params();
    Eigen::MatrixXd out(2 * n, k);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
        d(j) = h;
        const LandmarkSet plus = shape_from_params(model, apply_update(params, d));
        const LandmarkSet minus = shape_from_params(model, apply_update(params, -d));
        for (int i = 0; i < n; ++i) {
            out(i, j) = (plus.points[i].x() - minus.points[i].x()) / (2.0 * h);
            out(n + i, j) = (plus.points[i].y() - minus.points[i].y()) / (2.0 * h);
        }
    }
    return out;
}

/// Sliding-window forward pass, one scalar at a time.
inline Eigen::MatrixXd naive_response(const Eigen::MatrixXd& roi, const CenModel& m)
{
    const int n = static_cast<int>(roi.rows());
    const int out = n - 10;
    const CenArch a = m.arch();
    Eigen::MatrixXd result(out, out);
    std::vector<double> z(121), corr(a.correlation), hidden(a.hidden);
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < out; ++c) {
            double mean = 0.0;
            for (int y = 0; y < 11; ++y) {
                for (int x = 0; x < 11; ++x) {
                    mean += roi(r + y, c + x);
                }
            }
            mean /= 121.0;
            double var = 0.0;
            for (int y = 0; y < 11; ++y) {
                for (int x = 0; x < 11; ++x) {
                    var += (roi(r + y, c + x) - mean) * (roi(r + y, c + x) - mean);
                }
            }
            const double sd = std::sqrt(var / 121.0);
            for (int y = 0; y < 11; ++y) {
                for (int x = 0; x < 11; ++x) {
                    z[y * 11 + x] = sd < 1e-8 ? 0.0 : (roi(r + y, c + x) - mean) / sd;
                }
            }
            for (int k = 0; k < a.correlation; ++k) {
                double s = m.kernel_bias(k);
                for (int i = 0; i < 121; ++i) {
                    s += m.kernels(k, i) * z[i];
                }
                corr[k] = s;
            }
            for (int j = 0; j < a.hidden; ++j) {
                double s = m.hidden_bias(j);
                for (int k = 0; k < a.correlation; ++k) {
                    s += m.hidden_weights(j, k) * corr[k];
                }
                hidden[j] = s > 0.0 ? s : 0.0;
            }
            double logit = m.combiner_bias;
            for (int e = 0; e < a.experts; ++e) {
                double s = m.expert_bias(e);
                for (int j = 0; j < a.hidden; ++j) {
                    s += m.expert_weights(e, j) * hidden[j];
                }
                logit += m.combiner_weights(e) / (1.0 + std::exp(-s));
            }
            result(r, c) = 1.0 / (1.0 + std::exp(-logit));
        }
    }
    return result;
}

inline CenModel random_cen(const CenArch& arch, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    CenModel m = CenModel::zeros(arch);
    auto fill = [&](auto& mat, double sd) {
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
            for (Eigen::Index c = 0; c < mat.cols(); ++c) {
                mat(r, c) = sd * g(rng);
            }
        }
    };
    fill(m.kernels, 0.1);
    fill(m.kernel_bias, 0.1);
    fill(m.hidden_weights, 0.5);
    fill(m.hidden_bias, 0.1);
    fill(m.expert_weights, 0.5);
    fill(m.expert_bias, 0.1);
    fill(m.combiner_weights, 1.0);
    m.combiner_weights = m.combiner_weights.cwiseAbs();
    m.combiner_bias = g(rng);
    return m;
}

inline Eigen::MatrixXd random_roi(int n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 255.0);
    Eigen::MatrixXd roi(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            roi(r, c) = u(rng);
        }
    }
    return roi;
}

/// KDE mean shift written out directly from the Gaussian kernel.
inline Vec2 direct_mean_shift(const ResponseMap& map, const Vec2& x, double rho)
{
    double num_x = 0.0;
    double num_y = 0.0;
    double den = 0.0;
    for (int r = 0; r < map.rows(); ++r) {
        for (int c = 0; c < map.cols(); ++c) {
            const double yx = map.origin.x() + map.step * c;
            const double yy = map.origin.y() + map.step * r;
            const double d2 = (yx - x.x()) * (yx - x.x()) + (yy - x.y()) * (yy - x.y());
            const double k = map.values(r, c) * std::exp(-d2 / (2.0 * rho)) / (2.0 * M_PI * rho);
            num_x += k * yx;
            num_y += k * yy;
            den += k;
        }
    }
    return Vec2(num_x / den - x.x(), num_y / den - x.y());
}

/// Minimizes the quadratic update objective using nothing but evaluations of it:
/// the gradient and Hessian come from exact-for-quadratics central differences
/// and the stationary point from Gauss-Jordan elimination with partial pivoting.
inline Eigen::VectorXd brute_force_minimizer(const std::function<double(const Eigen::VectorXd&)>& f, int k,
                                             double h = 1.0)
{
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(k);
    auto e = [&](int i) {
        Eigen::VectorXd v = zero;
        v(i) = h;
        return v;
    };
    std::vector<std::vector<double>> a(k, std::vector<double>(k + 1));
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            a[i][j] = (f(e(i) + e(j)) - f(e(i) - e(j)) - f(-e(i) + e(j)) + f(-e(i) - e(j))) / (4.0 * h * h);
        }
        a[i][k] = -(f(e(i)) - f(-e(i))) / (2.0 * h);
    }
    for (int col = 0; col < k; ++col) {
        int pivot = col;
        for (int r = col + 1; r < k; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) {
                pivot = r;
            }
        }
        std::swap(a[col], a[pivot]);
        for (int r = 0; r < k; ++r) {
            if (r == col) {
                continue;
            }
            const double factor = a[r][col] / a[col][col];
            for (int c = col; c <= k; ++c) {
                a[r][c] -= factor * a[col][c];
            }
        }
    }
    Eigen::VectorXd x(k);
    for (int i = 0; i < k; ++i) {
        x(i) = a[i][k] / a[i][i];
    }
    return x;
}

/// Scene plus a detector-style initial box: +-10% scale and +-5 px shift of the true box.
struct SceneCase {
    SyntheticScene scene;
    BoundingBox init_box;
};

inline BoundingBox perturbed_box(const LandmarkSet& truth, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const BoundingBox box = bounding_box(truth.points);
    const double s = 1.0 + 0.1 * u(rng);
    const Vec2 c = box.center() + Vec2(5.0 * u(rng), 5.0 * u(rng));
    return {c.x() - 0.5 * s * box.width, c.y() - 0.5 * s * box.height, s * box.width, s * box.height};
}

inline std::vector<SceneCase> make_scenes(const PdmModel& model, const SceneSampling& sampling, int count,
                                          std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<SceneCase> out;
    for (int k = 0; k < count; ++k) {
        const PdmParams p = sample_scene_params(model, sampling, rng);
        SceneCase sc{render_scene(model, p, sampling.width, sampling.height, rng()), {}};
        sc.init_box = perturbed_box(sc.scene.true_landmarks, rng);
        out.push_back(std::move(sc));
    }
    return out;
}

/// Toy training settings shared by the end-to-end checks.
inline TrainConfig toy_train_config(std::uint64_t seed, bool nonneg = true)
{
    TrainConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.epochs = 20;
    cfg.batch_size = 64;
    cfg.seed = seed;
    cfg.enforce_nonneg = nonneg;
    return cfg;
}

/// One toy detector per scale (appearance drawn for a 60 px face), shared by all landmarks.
inline CenBank train_toy_bank(int n_landmarks, const std::vector<int>& scales, std::uint64_t seed,
                              std::vector<double>* r2 = nullptr)
{
    CenBank bank({0.0}, scales);
    for (int scale : scales) {
        const TrainConfig cfg = toy_train_config(seed);
        PatchSpec spec;
        spec.look.feature_radius *= scale / 60.0;
        const PatchDataset train = gen_synthetic_patches(cfg, 500, spec, Split::train);
        const PatchDataset test = gen_synthetic_patches(cfg, 200, spec, Split::test);
        const TrainResult result = train_cen(train, test, cfg);
        if (r2) {
            r2->push_back(result.curve.back().test_r2);
        }
        for (int l = 0; l < n_landmarks; ++l) {
            CenModel m = result.model;
            m.landmark = l;
            m.view = 0;
            m.scale_px = scale;
            bank.add(std::move(m));
        }
    }
    return bank;
}

inline double landmark_rms(const LandmarkSet& a, const LandmarkSet& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a.points[i] - b.points[i]).squaredNorm();
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

/// Every trainable scalar of a model, in a fixed order.
inline std::vector<double*> parameter_slots(CenModel& m)
{
    std::vector<double*> out;
    auto add = [&](auto& mat) {
        for (Eigen::Index i = 0; i < mat.size(); ++i) {
            out.push_back(mat.data() + i);
        }
    };
    add(m.kernels);
    add(m.kernel_bias);
    add(m.hidden_weights);
    add(m.hidden_bias);
    add(m.expert_weights);
    add(m.expert_bias);
    add(m.combiner_weights);
    out.push_back(&m.combiner_bias);
    return out;
}

} // namespace clmfit::testing
