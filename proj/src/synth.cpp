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
#include "clmfit/synth.hpp"
#include "clmfit/rotation.hpp"

#include <algorithm>
#include <cmath>

namespace clmfit {

namespace {

// Smooth compact window, 1 at the center and 0 from `cutoff` outwards.
double window(double d2, double cutoff)
{
    const double t = d2 / (cutoff * cutoff);
    return t < 1.0 ? (1.0 - t) * (1.0 - t) : 0.0;
}

} // namespace

double prototype_support(double radius)
{
    return 3.0 * radius;
}

double prototype_profile(int prototype, double dx, double dy, double radius)
{
    const double d2 = dx * dx + dy * dy;
    const double cutoff = prototype_support(radius);
    switch (prototype) {
    case 0:
        return -std::exp(-d2 / (2.0 * radius * radius)) * window(d2, cutoff);
    case 1: {
        const double k = 0.35 * radius;
        return (sigmoid(dx / k) * sigmoid(dy / k) - 0.25) * window(d2, cutoff);
    }
    case 2: {
        const double arm = 0.3 * radius;
        const double v = std::exp(-dx * dx / (2.0 * arm * arm)) + std::exp(-dy * dy / (2.0 * arm * arm));
        return (v - 0.5) * window(d2, cutoff);
    }
    default:
        fail(ErrorKind::validation, "unknown appearance prototype " + std::to_string(prototype));
    }
}

int sample_prototype(std::span<const double> weights, std::mt19937_64& rng)
{
    if (weights.empty() || static_cast<int>(weights.size()) > kPrototypeCount) {
        fail(ErrorKind::validation, "prototype weights must list 1 to 3 entries");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            fail(ErrorKind::validation, "prototype weights must be non-negative");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        fail(ErrorKind::validation, "prototype weights sum to zero");
    }
    std::uniform_real_distribution<double> unit(0.0, total);
    const double u = unit(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        acc += weights[k];
        if (u < acc) {
            return static_cast<int>(k);
        }
    }
    return static_cast<int>(weights.size()) - 1;
}

void stamp_landmark(Image& image, const Vec2& center, int prototype, double contrast, double radius)
{
    const double support = prototype_support(radius);
    const int x0 = std::max(0, static_cast<int>(std::floor(center.x() - support)));
    const int x1 = std::min(image.width() - 1, static_cast<int>(std::ceil(center.x() + support)));
    const int y0 = std::max(0, static_cast<int>(std::floor(center.y() - support)));
    const int y1 = std::min(image.height() - 1, static_cast<int>(std::ceil(center.y() + support)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            image.at(x, y) += contrast * prototype_profile(prototype, x - center.x(), y - center.y(), radius);
        }
    }
}

SyntheticScene render_scene(const PdmModel& model, const PdmParams& params, int width, int height,
                            std::uint64_t seed, const AppearanceSpec& look, double margin)
{
    SyntheticScene scene;
    scene.seed = seed;
    scene.true_params = params;
    scene.true_landmarks = shape_from_params(model, params);
    for (std::size_t i = 0; i < scene.true_landmarks.size(); ++i) {
        const Vec2& p = scene.true_landmarks.points[i];
        if (p.x() < margin || p.y() < margin || p.x() > width - 1 - margin || p.y() > height - 1 - margin) {
            fail(ErrorKind::validation, "landmark " + std::to_string(i) + " falls outside the image margin");
        }
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> contrast(look.contrast_min, look.contrast_max);
    std::uniform_real_distribution<double> jitter(-look.brightness_jitter, look.brightness_jitter);
    std::normal_distribution<double> noise(0.0, 1.0);

    scene.image = Image(width, height, look.background + jitter(rng));
    for (std::size_t i = 0; i < scene.true_landmarks.size(); ++i) {
        const int proto = sample_prototype(look.prototype_weights, rng);
        const double c = contrast(rng);
        scene.prototype_ids.push_back(proto);
        stamp_landmark(scene.image, scene.true_landmarks.points[i], proto, c, look.feature_radius);
    }
    if (look.noise_sigma > 0.0) {
        for (double& px : scene.image.pixels()) {
            px += look.noise_sigma * noise(rng);
        }
    }
    return scene;
}

PdmParams sample_scene_params(const PdmModel& model, const SceneSampling& sampling, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    PdmParams p = PdmParams::neutral(model);
    p.scale = sampling.iod_px / reference_length(model) * (1.0 + sampling.scale_jitter * unit(rng));
    EulerAngles e;
    e.pitch = deg2rad(sampling.pitch_deg) * unit(rng);
    e.yaw = deg2rad(sampling.yaw_deg) * unit(rng);
    e.roll = deg2rad(sampling.roll_deg) * unit(rng);
    p.rotation = axis_angle_from_euler(e);
    for (int j = 0; j < model.n_modes(); ++j) {
        p.nonrigid(j) = sampling.nonrigid_fraction * std::sqrt(model.eigenvalues(j)) * gauss(rng);
    }
    PdmParams at_origin = p;
    at_origin.translation.setZero();
    const BoundingBox box = bounding_box(shape_from_params(model, at_origin).points);
    p.translation = Vec2(0.5 * (sampling.width - 1), 0.5 * (sampling.height - 1)) - box.center();
    return p;
}

ResponseMap oracle_response(const Vec2& truth_image, const RoiRequest& request, double sigma)
{
    if (!(sigma > 0.0)) {
        fail(ErrorKind::validation, "oracle sigma must be positive");
    }
    const int size = request.map_size();
    const Vec2 truth_ref = request.to_ref * truth_image;
    ResponseMap map;
    map.origin = request.map_origin();
    map.step = 1.0;
    map.values.resize(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double d2 = (map.cell_center(r, c) - truth_ref).squaredNorm();
            map.values(r, c) = std::exp(-d2 / (2.0 * sigma * sigma));
        }
    }
    return map;
}

ResponseMap oracle_response(const SyntheticScene& scene, int landmark, const RoiRequest& request, double sigma)
{
    return oracle_response(scene.true_landmarks.points.at(landmark), request, sigma);
}

} // namespace clmfit
