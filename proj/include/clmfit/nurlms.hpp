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

#include "clmfit/bank.hpp"
#include "clmfit/cen.hpp"
#include "clmfit/pdm.hpp"

#include <functional>
#include <limits>
#include <optional>

namespace clmfit {

struct NurlmsConfig {
    double rho = 1.85 * 1.85;           // KDE kernel variance, working-scale px^2
    double reg = 32.0;                  // r
    double weight = 2.5;                // w
    int max_iters = 10;                 // per stage
    double convergence_tol = 1e-3;      // on |dp|
    std::vector<int> roi_schedule{25, 23, 21, 21};
    // Hypothesis early stopping on the final MAP score of a fit.
    double accept_threshold = -100.0;
    double reject_threshold = -300.0;
    bool extended_views = false;        // adds +-55 and +-90 degree yaw initializations
    int threads = 1;                    // per-landmark response maps
};

void validate(const NurlmsConfig& cfg);

struct LandmarkReliability {
    Eigen::VectorXd c;

    static LandmarkReliability uniform(int n_landmarks, double value = 1.0);
};

void validate(const LandmarkReliability& reliability, int n_landmarks);

/**
 * KDE mean-shift vector: the kernel-weighted mean of the map's cell centers
 * minus `current`. Returns nullopt when the weighted mass vanishes.
 */
std::optional<Vec2> mean_shift(const ResponseMap& map, const Vec2& current, double rho);

/**
 * Solves (J^T W J + r L) dp = J^T W v - r L p with L = diag(prior_precision).
 * Parameters that receive neither data nor prior information are held at
 * zero. Throws ErrorKind::numerical on a singular system.
 */
Eigen::VectorXd solve_update(const Eigen::MatrixXd& jac, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& prior_precision,
                             const Eigen::VectorXd& params, double reg);

/// Per-row weights w * c_i for the stacked [x..., y...] layout; hidden landmarks get 0.
Eigen::VectorXd landmark_weights(const LandmarkReliability& reliability,
                                 const std::vector<bool>& visible, double weight);

/// Prior precision: zero on the rigid block, 1 / lambda_j on the modes.
Eigen::VectorXd prior_precision(const PdmModel& model);

/// Regularized landmark mean-shift parameter update for mean-shift vectors `v`
/// stacked [vx..., vy...].
Eigen::VectorXd update_step(const PdmModel& model, const PdmParams& params, const Eigen::VectorXd& v,
                            const LandmarkReliability& reliability, const std::vector<bool>& visible,
                            const NurlmsConfig& cfg);

/// Image -> working frame: scales the face so `ref_length` model units span
/// `scale_px` pixels and undoes the in-plane rotation.
Mat2 working_frame(const PdmParams& params, int scale_px, double ref_length);

/// Region of interest around one landmark. `to_ref` maps image offsets into
/// the working frame, where the detector scale applies.
struct RoiRequest {
    int landmark = 0;
    int view = 0;
    int scale_px = 0;
    int roi_size = 0;
    Mat2 to_ref = Mat2::Identity();
    Vec2 center_ref = Vec2::Zero();

    Vec2 to_image(const Vec2& ref) const { return to_ref.inverse() * ref; }
    int map_size() const { return roi_size - (kKernelSize - 1); }
    /// Working-frame position of map cell (0, 0).
    Vec2 map_origin() const { return center_ref - 0.5 * (map_size() - 1) * Vec2::Ones(); }
};

/// Samples the ROI pixels (bilinear, border-clamped); roi(r, c) is the image at
/// the working-frame point center_ref + (c, r) - (n - 1) / 2.
Eigen::MatrixXd extract_roi(const Image& image, const RoiRequest& request);

/// Anything that produces response maps for landmarks: trained detectors or test oracles.
class ResponseSource {
public:
    virtual ~ResponseSource() = default;
    virtual std::vector<double> view_yaws() const = 0;   // radians
    virtual std::vector<int> scales() const = 0;         // ascending
    virtual bool visible(int landmark, int view) const = 0;
    virtual ResponseMap respond(const RoiRequest& request) const = 0;
};

/// Response maps from a detector bank applied to an image.
class CenBankSource : public ResponseSource {
public:
    CenBankSource(const CenBank& bank, const Image& image) : bank_(bank), image_(image) {}

    std::vector<double> view_yaws() const override;
    std::vector<int> scales() const override { return bank_.scales(); }
    bool visible(int landmark, int view) const override { return !bank_.occluded(landmark, view); }
    ResponseMap respond(const RoiRequest& request) const override;

private:
    const CenBank& bank_;
    const Image& image_;
};

/// Nearest view by yaw; ties break toward the smaller |yaw|.
int select_view(std::span<const double> view_yaws, const Vec3& rotation);

/// Detector scale used at `stage` (one finer scale per stage, saturating).
int stage_scale(std::span<const int> scales, int stage);

/// Throws ErrorKind::config when a required detector is missing.
void check_bank_for_fit(const CenBank& bank, int n_landmarks, const NurlmsConfig& cfg);

struct FitResult {
    PdmParams params;
    LandmarkSet landmarks;
    double map_score = -std::numeric_limits<double>::infinity();
    std::vector<int> stage_iterations;
    std::vector<int> stage_roi_sizes;
    bool discarded = false;          // abandoned mid-fit below the reject threshold
    int hypothesis = 0;              // index of the winning initialization
    int hypotheses_evaluated = 0;
    bool low_confidence = false;

    int total_iterations() const;
};

/// Called after every parameter update with (params, stage, iteration).
using FitObserver = std::function<void(const PdmParams&, int, int)>;

struct FitOptions {
    bool allow_discard = false;
    FitObserver observer;
};

/// Multi-stage NU-RLMS fit from `init`.
FitResult fit(const PdmModel& model, const ResponseSource& source, const PdmParams& init,
              const NurlmsConfig& cfg, const LandmarkReliability& reliability,
              const FitOptions& options = {});

/// Initial orientations in evaluation order.
std::vector<Vec3> hypothesis_orientations(bool extended);

/**
 * Fits from every initial orientation in order and keeps the best MAP score.
 * Unless `exhaustive`, stops at the first fit scoring above accept_threshold
 * and abandons fits that fall below reject_threshold between stages.
 */
FitResult multi_hypothesis_fit(const PdmModel& model, const ResponseSource& source, const BoundingBox& bbox,
                               const NurlmsConfig& cfg, const LandmarkReliability& reliability,
                               bool exhaustive = false);

} // namespace clmfit
