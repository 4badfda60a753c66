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
#include "clmfit/cen.hpp"

#include <cmath>

namespace clmfit {

namespace {

void check_shape(const char* field, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                 Eigen::Index want_cols)
{
    if (rows != want_rows || cols != want_cols) {
        fail(ErrorKind::validation, std::string("cen: ") + field + " has shape "
                                        + std::to_string(rows) + "x" + std::to_string(cols)
                                        + ", expected " + std::to_string(want_rows) + "x"
                                        + std::to_string(want_cols));
    }
}

void check_finite(const char* field, const Eigen::MatrixXd& m)
{
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (!std::isfinite(m(r, c))) {
                fail(ErrorKind::validation, std::string("cen: ") + field + "[" + std::to_string(r)
                                                + "][" + std::to_string(c) + "] is not finite");
            }
        }
    }
}

} // namespace

CenArch CenModel::arch() const
{
    return {static_cast<int>(kernels.rows()), static_cast<int>(hidden_weights.rows()),
            static_cast<int>(expert_weights.rows())};
}

CenModel CenModel::zeros(const CenArch& arch)
{
    if (arch.correlation < 1 || arch.hidden < 1 || arch.experts < 1) {
        fail(ErrorKind::validation, "cen: channel counts must be positive");
    }
    CenModel m;
    m.kernels = Eigen::MatrixXd::Zero(arch.correlation, kKernelArea);
    m.kernel_bias = Eigen::VectorXd::Zero(arch.correlation);
    m.hidden_weights = Eigen::MatrixXd::Zero(arch.hidden, arch.correlation);
    m.hidden_bias = Eigen::VectorXd::Zero(arch.hidden);
    m.expert_weights = Eigen::MatrixXd::Zero(arch.experts, arch.hidden);
    m.expert_bias = Eigen::VectorXd::Zero(arch.experts);
    m.combiner_weights = Eigen::VectorXd::Zero(arch.experts);
    return m;
}

void validate(const CenModel& model, bool allow_negative_combiner)
{
    const CenArch a = model.arch();
    if (a.correlation < 1 || a.hidden < 1 || a.experts < 1) {
        fail(ErrorKind::validation, "cen: empty layer");
    }
    check_shape("c1.w", model.kernels.rows(), model.kernels.cols(), a.correlation, kKernelArea);
    check_shape("c1.b", model.kernel_bias.rows(), 1, a.correlation, 1);
    check_shape("c2.w", model.hidden_weights.rows(), model.hidden_weights.cols(), a.hidden, a.correlation);
    check_shape("c2.b", model.hidden_bias.rows(), 1, a.hidden, 1);
    check_shape("c3.w", model.expert_weights.rows(), model.expert_weights.cols(), a.experts, a.hidden);
    check_shape("c3.b", model.expert_bias.rows(), 1, a.experts, 1);
    check_shape("combiner.w", model.combiner_weights.rows(), 1, a.experts, 1);
    check_finite("c1.w", model.kernels);
    check_finite("c1.b", model.kernel_bias);
    check_finite("c2.w", model.hidden_weights);
    check_finite("c2.b", model.hidden_bias);
    check_finite("c3.w", model.expert_weights);
    check_finite("c3.b", model.expert_bias);
    check_finite("combiner.w", model.combiner_weights);
    if (!std::isfinite(model.combiner_bias)) {
        fail(ErrorKind::validation, "cen: combiner.b is not finite");
    }
    if (!allow_negative_combiner) {
        for (Eigen::Index j = 0; j < model.combiner_weights.size(); ++j) {
            if (model.combiner_weights(j) < 0.0) {
                fail(ErrorKind::validation,
                     "cen: combiner.w[" + std::to_string(j) + "] is negative");
            }
        }
    }
    if (model.scale_px < 0) {
        fail(ErrorKind::validation, "cen: scale_px must be non-negative");
    }
}

CenModel mirrored(const CenModel& model)
{
    CenModel out = model;
    for (Eigen::Index k = 0; k < model.kernels.rows(); ++k) {
        for (int y = 0; y < kKernelSize; ++y) {
            for (int x = 0; x < kKernelSize; ++x) {
                out.kernels(k, y * kKernelSize + x) = model.kernels(k, y * kKernelSize + (kKernelSize - 1 - x));
            }
        }
    }
    return out;
}

Eigen::MatrixXd normalized_windows(const Eigen::MatrixXd& roi)
{
    if (roi.rows() < kKernelSize || roi.cols() < kKernelSize) {
        fail(ErrorKind::validation, "cen: ROI smaller than the 11x11 kernel");
    }
    if (roi.rows() != roi.cols()) {
        fail(ErrorKind::validation, "cen: ROI must be square");
    }
    if (!roi.allFinite()) {
        fail(ErrorKind::validation, "cen: ROI contains non-finite values");
    }
    const int out = static_cast<int>(roi.rows()) - (kKernelSize - 1);
    Eigen::MatrixXd windows(kKernelArea, out * out);
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < out; ++c) {
            auto col = windows.col(r * out + c);
            for (int y = 0; y < kKernelSize; ++y) {
                for (int x = 0; x < kKernelSize; ++x) {
                    col(y * kKernelSize + x) = roi(r + y, c + x);
                }
            }
            const double mean = col.mean();
            col.array() -= mean;
            const double stddev = std::sqrt(col.squaredNorm() / kKernelArea);
            if (stddev < kZScoreEpsilon) {
                col.setZero();
            } else {
                col /= stddev;
            }
        }
    }
    return windows;
}

Eigen::MatrixXd znorm_correlate(const Eigen::MatrixXd& roi, const CenModel& model)
{
    Eigen::MatrixXd out = model.kernels * normalized_windows(roi);
    out.colwise() += model.kernel_bias;
    return out;
}

Eigen::VectorXd forward_windows(const Eigen::MatrixXd& windows, const CenModel& model)
{
    Eigen::MatrixXd corr = model.kernels * windows;
    corr.colwise() += model.kernel_bias;
    Eigen::MatrixXd hidden = model.hidden_weights * corr;
    hidden.colwise() += model.hidden_bias;
    hidden = hidden.cwiseMax(0.0);
    Eigen::MatrixXd experts = model.expert_weights * hidden;
    experts.colwise() += model.expert_bias;
    experts = experts.unaryExpr([](double z) { return sigmoid(z); });
    Eigen::VectorXd logits = experts.transpose() * model.combiner_weights;
    logits.array() += model.combiner_bias;
    return logits.unaryExpr([](double z) { return sigmoid(z); });
}

ResponseMap response_map(const Eigen::MatrixXd& roi, const CenModel& model, const Vec2& origin,
                         double step)
{
    const CenArch a = model.arch();
    if (model.kernels.cols() != kKernelArea || model.hidden_weights.cols() != a.correlation
        || model.expert_weights.cols() != a.hidden || model.combiner_weights.size() != a.experts) {
        fail(ErrorKind::validation, "cen: model layer dimensions do not chain");
    }
    const Eigen::VectorXd probs = forward_windows(normalized_windows(roi), model);
    const int out = static_cast<int>(roi.rows()) - (kKernelSize - 1);
    ResponseMap map;
    map.values.resize(out, out);
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < out; ++c) {
            map.values(r, c) = probs(r * out + c);
        }
    }
    map.origin = origin;
    map.step = step;
    return map;
}

} // namespace clmfit
