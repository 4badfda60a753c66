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

#include "clmfit/common.hpp"

#include <cmath>

namespace clmfit {

inline constexpr int kKernelSize = 11;
inline constexpr int kKernelArea = kKernelSize * kKernelSize;
inline constexpr double kZScoreEpsilon = 1e-8;

/// Channel counts of the four-stage chain correlation -> ReLU -> experts -> combiner.
struct CenArch {
    int correlation = 500;
    int hidden = 200;
    int experts = 100;

    bool operator==(const CenArch&) const = default;
};

/**
 * Convolutional experts network for one (landmark, view, scale).
 *
 * Stage 1 correlates Z-score normalized 11x11 windows with `kernels` (one
 * row-major kernel per row). Stages 2 and 3 are 1x1 convolutions with ReLU
 * and sigmoid activations; stage 3 outputs are the individual expert votes.
 * The combiner mixes the votes with non-negative weights and a sigmoid.
 */
struct CenModel {
    int landmark = 0;
    int view = 0;
    int scale_px = 0;

    Eigen::MatrixXd kernels;            // correlation x 121
    Eigen::VectorXd kernel_bias;        // correlation
    Eigen::MatrixXd hidden_weights;     // hidden x correlation
    Eigen::VectorXd hidden_bias;        // hidden
    Eigen::MatrixXd expert_weights;     // experts x hidden
    Eigen::VectorXd expert_bias;        // experts
    Eigen::VectorXd combiner_weights;   // experts, all >= 0
    double combiner_bias = 0.0;

    CenArch arch() const;
    static CenModel zeros(const CenArch& arch);

    bool operator==(const CenModel&) const = default;
};

/// Throws ErrorKind::validation naming the offending field and index.
void validate(const CenModel& model, bool allow_negative_combiner = false);

/// Detector for the horizontally mirrored appearance (kernels flipped left-right).
CenModel mirrored(const CenModel& model);

/**
 * Grid of alignment probabilities. values(row, col) belongs to the location
 * origin + step * (col, row) in the frame the map was computed in.
 */
struct ResponseMap {
    Eigen::MatrixXd values;
    Vec2 origin = Vec2::Zero();
    double step = 1.0;

    int rows() const { return static_cast<int>(values.rows()); }
    int cols() const { return static_cast<int>(values.cols()); }
    Vec2 cell_center(int row, int col) const { return origin + step * Vec2(col, row); }
};

/// 121 x (out * out) matrix of Z-score normalized windows; column r * out + c
/// is the window whose top-left pixel is roi(r, c).
Eigen::MatrixXd normalized_windows(const Eigen::MatrixXd& roi);

/// Stage-1 output, correlation x (out * out), where out = n - 10.
Eigen::MatrixXd znorm_correlate(const Eigen::MatrixXd& roi, const CenModel& model);

/// Full forward pass over a square ROI. The map cell (r, c) is centered on
/// roi(r + 5, c + 5); `origin` is that cell's position for (0, 0).
ResponseMap response_map(const Eigen::MatrixXd& roi, const CenModel& model,
                         const Vec2& origin = Vec2::Zero(), double step = 1.0);

/// Same forward pass starting from precomputed normalized windows; returns
/// the flattened probabilities.
Eigen::VectorXd forward_windows(const Eigen::MatrixXd& windows, const CenModel& model);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace clmfit
