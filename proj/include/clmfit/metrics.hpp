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

#include "clmfit/pdm.hpp"

#include <filesystem>
#include <string>

namespace clmfit {

enum class NormMode { iod, face_size };

NormMode parse_norm_mode(const std::string& text);
std::string to_string(NormMode mode);

/**
 * Mean landmark distance over landmarks visible in both sets, divided by the
 * ground-truth inter-ocular distance (IOD mode, needs `eye_corners`) or by the
 * mean of the ground-truth bounding box width and height.
 */
double normalized_error(const LandmarkSet& pred, const LandmarkSet& truth, NormMode mode,
                        const std::optional<std::array<int, 2>>& eye_corners = std::nullopt);

struct CurvePoint {
    double threshold = 0.0;
    double fraction = 0.0;
};

/// Fraction of errors <= each threshold; thresholds must be ascending.
std::vector<CurvePoint> cumulative_curve(std::span<const double> errors, std::span<const double> thresholds);

/// `count` evenly spaced thresholds from 0 to `max` inclusive.
std::vector<double> linear_thresholds(double max, int count);

double median(std::span<const double> values);

struct ErrorReport {
    std::vector<double> per_image_errors;
    double median = 0.0;
    std::vector<CurvePoint> curve;
    NormMode mode = NormMode::iod;
};

ErrorReport make_report(std::vector<double> errors, std::span<const double> thresholds, NormMode mode);

/// Columns: threshold, fraction.
void save_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);
/// {"version", "mode", "count", "median", "errors"}.
void save_report_json(const ErrorReport& report, const std::filesystem::path& path);

} // namespace clmfit
