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

#include "clmfit/nurlms.hpp"
#include "clmfit/pdm.hpp"

#include <random>

namespace clmfit {

inline constexpr int kPrototypeCount = 3;

/// Appearance of rendered landmarks: prototype mixture, contrast, brightness, noise.
struct AppearanceSpec {
    std::vector<double> prototype_weights{0.5, 0.3, 0.2};
    double feature_radius = 2.5;
    double contrast_min = 50.0;
    double contrast_max = 90.0;
    double background = 128.0;
    double brightness_jitter = 20.0;
    double noise_sigma = 4.0;
};

/// Unit-contrast intensity of a prototype at offset (dx, dy) from the landmark.
/// 0: dark blob, 1: corner, 2: cross. Zero beyond prototype_support().
double prototype_profile(int prototype, double dx, double dy, double radius);
double prototype_support(double radius);

int sample_prototype(std::span<const double> weights, std::mt19937_64& rng);

/// Adds contrast * profile around `center` (continuous position) into `image`.
void stamp_landmark(Image& image, const Vec2& center, int prototype, double contrast, double radius);

struct SyntheticScene {
    Image image;
    PdmParams true_params;
    LandmarkSet true_landmarks;
    std::vector<int> prototype_ids;
    std::uint64_t seed = 0;
};

/// Renders every landmark with a randomly drawn prototype. Throws
/// ErrorKind::validation when a landmark lies within `margin` of the border.
SyntheticScene render_scene(const PdmModel& model, const PdmParams& params, int width, int height,
                            std::uint64_t seed, const AppearanceSpec& look = {}, double margin = 12.0);

struct SceneSampling {
    int width = 200;
    int height = 200;
    double iod_px = 60.0;
    double scale_jitter = 0.0;          // relative, uniform
    double yaw_deg = 15.0;              // uniform in [-yaw, yaw]
    double pitch_deg = 0.0;
    double roll_deg = 0.0;
    double nonrigid_fraction = 0.5;     // q_j ~ N(0, (fraction^2) * lambda_j)
};

/// Random face parameters centered in the image.
PdmParams sample_scene_params(const PdmModel& model, const SceneSampling& sampling, std::mt19937_64& rng);

/// Gaussian of std `sigma` (working px) around the true landmark, sampled on
/// the request's response grid; peak value 1.
ResponseMap oracle_response(const Vec2& truth_image, const RoiRequest& request, double sigma);
ResponseMap oracle_response(const SyntheticScene& scene, int landmark, const RoiRequest& request,
                            double sigma);

/// Response source that knows the true landmark positions.
class OracleSource : public ResponseSource {
public:
    OracleSource(LandmarkSet truth, double sigma, int scale_px = 60, std::vector<double> view_yaws = {0.0})
        : truth_(std::move(truth)), sigma_(sigma), scale_px_(scale_px), views_(std::move(view_yaws))
    {
    }

    std::vector<double> view_yaws() const override { return views_; }
    std::vector<int> scales() const override { return {scale_px_}; }
    bool visible(int landmark, int) const override { return truth_.visible.at(landmark); }
    ResponseMap respond(const RoiRequest& request) const override
    {
        return oracle_response(truth_.points.at(request.landmark), request, sigma_);
    }

private:
    LandmarkSet truth_;
    double sigma_;
    int scale_px_;
    std::vector<double> views_;
};

} // namespace clmfit
