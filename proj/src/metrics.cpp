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
#include "clmfit/metrics.hpp"
#include "clmfit/model_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clmfit {

NormMode parse_norm_mode(const std::string& text)
{
    if (text == "iod") {
        return NormMode::iod;
    }
    if (text == "size" || text == "face_size") {
        return NormMode::face_size;
    }
    fail(ErrorKind::validation, "unknown normalization mode '" + text + "' (expected iod or size)");
}

std::string to_string(NormMode mode)
{
    return mode == NormMode::iod ? "iod" : "size";
}

double normalized_error(const LandmarkSet& pred, const LandmarkSet& truth, NormMode mode,
                        const std::optional<std::array<int, 2>>& eye_corners)
{
    if (pred.size() != truth.size()) {
        fail(ErrorKind::validation, "metrics: landmark counts differ (" + std::to_string(pred.size()) + " vs "
                                        + std::to_string(truth.size()) + ")");
    }
    auto shown = [](const LandmarkSet& s, std::size_t i) { return s.visible.empty() || s.visible[i]; };

    double normalizer = 0.0;
    if (mode == NormMode::iod) {
        if (!eye_corners) {
            fail(ErrorKind::validation, "metrics: IOD normalization needs eye corner indices");
        }
        const auto [a, b] = *eye_corners;
        if (a < 0 || b < 0 || a >= static_cast<int>(truth.size()) || b >= static_cast<int>(truth.size())) {
            fail(ErrorKind::validation, "metrics: eye corner index out of range");
        }
        normalizer = (truth.points[a] - truth.points[b]).norm();
    } else {
        std::vector<Vec2> pts;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (shown(truth, i)) {
                pts.push_back(truth.points[i]);
            }
        }
        if (!pts.empty()) {
            const BoundingBox box = bounding_box(pts);
            normalizer = 0.5 * (box.width + box.height);
        }
    }
    if (!(normalizer > 0.0)) {
        fail(ErrorKind::validation, "metrics: zero normalizer");
    }

    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (shown(pred, i) && shown(truth, i)) {
            total += (pred.points[i] - truth.points[i]).norm();
            ++count;
        }
    }
    if (count == 0) {
        fail(ErrorKind::validation, "metrics: no commonly visible landmarks");
    }
    return total / count / normalizer;
}

std::vector<CurvePoint> cumulative_curve(std::span<const double> errors, std::span<const double> thresholds)
{
    if (errors.empty()) {
        fail(ErrorKind::validation, "metrics: empty error list");
    }
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
        fail(ErrorKind::validation, "metrics: thresholds must be ascending");
    }
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<CurvePoint> curve;
    curve.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        curve.push_back({t, static_cast<double>(below) / static_cast<double>(sorted.size())});
    }
    return curve;
}

std::vector<double> linear_thresholds(double max, int count)
{
    if (count < 2 || !(max > 0.0)) {
        fail(ErrorKind::validation, "metrics: need at least two thresholds and a positive maximum");
    }
    std::vector<double> out(count);
    for (int k = 0; k < count; ++k) {
        out[k] = max * k / (count - 1);
    }
    return out;
}

double median(std::span<const double> values)
{
    if (values.empty()) {
        fail(ErrorKind::validation, "metrics: median of an empty list");
    }
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

ErrorReport make_report(std::vector<double> errors, std::span<const double> thresholds, NormMode mode)
{
    ErrorReport report;
    report.median = median(errors);
    report.curve = cumulative_curve(errors, thresholds);
    report.per_image_errors = std::move(errors);
    report.mode = mode;
    return report;
}

void save_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path)
{
    std::ostringstream out;
    out << "threshold,fraction\n";
    for (const auto& p : curve) {
        out << io::format_double(p.threshold) << "," << io::format_double(p.fraction) << "\n";
    }
    io::write_text(path, out.str());
}

void save_report_json(const ErrorReport& report, const std::filesystem::path& path)
{
    const nlohmann::json j = {{"version", io::kFormatVersion},
                              {"mode", to_string(report.mode)},
                              {"count", report.per_image_errors.size()},
                              {"median", report.median},
                              {"errors", report.per_image_errors}};
    io::write_text(path, j.dump(1) + "\n");
}

} // namespace clmfit
