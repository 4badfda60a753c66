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

#include <array>
#include <optional>

namespace clmfit {

/// Number of rigid parameters: scale, tx, ty, wx, wy, wz.
inline constexpr int kRigidParams = 6;

/**
 * 3D point distribution model.
 *
 * `mean` and the rows of `basis` are interleaved per landmark:
 * (x0, y0, z0, x1, y1, z1, ...). Basis columns are orthonormal and
 * `eigenvalues` holds the variance of each non-rigid mode.
 */
struct PdmModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;
    Eigen::VectorXd eigenvalues;
    // Outer eye corner landmark indices; drives IOD normalization and the
    // working scale of the local detectors.
    std::optional<std::array<int, 2>> eye_corners;

    int n_landmarks() const { return static_cast<int>(mean.size() / 3); }
    int n_modes() const { return static_cast<int>(basis.cols()); }
    int n_params() const { return kRigidParams + n_modes(); }
};

/// Throws ErrorKind::validation naming the first violated invariant.
void validate(const PdmModel& model, double orthonormal_tol = 1e-8);

/// p = [s, t, w, q].
struct PdmParams {
    double scale = 1.0;
    Vec2 translation = Vec2::Zero();
    Vec3 rotation = Vec3::Zero();   // axis-angle, radians
    Eigen::VectorXd nonrigid;

    static PdmParams neutral(const PdmModel& model);

    /// Packed as [s, tx, ty, wx, wy, wz, q...], the Jacobian column order.
    Eigen::VectorXd to_vector() const;
    static PdmParams from_vector(const Eigen::VectorXd& packed);
};

struct LandmarkSet {
    std::vector<Vec2> points;
    std::vector<bool> visible;

    std::size_t size() const { return points.size(); }
};

/// Model shape (mean + deformation) as an n x 3 matrix, one landmark per row.
Eigen::MatrixXd shape_3d(const PdmModel& model, const Eigen::VectorXd& nonrigid);

/// x_i = s * R_2D * (mean_i + Phi_i q) + t. All landmarks are marked visible.
LandmarkSet shape_from_params(const PdmModel& model, const PdmParams& params);

/**
 * Jacobian of the 2D landmark positions, 2n x (6 + m).
 *
 * Rows are stacked [x_0 .. x_{n-1}, y_0 .. y_{n-1}]. Rotation columns are the
 * derivative of R(dw) * R at dw = 0, i.e. an incremental rotation composed on
 * the left; apply_update() composes rotation updates the same way.
 */
Eigen::MatrixXd jacobian(const PdmModel& model, const PdmParams& params);

/// Mahalanobis norm of q under the eigenvalue prior: sum_j q_j^2 / lambda_j.
double regularization(const PdmModel& model, const PdmParams& params);

/// p + dp, with the rotation part applied as R(dw) * R(w).
PdmParams apply_update(const PdmParams& params, const Eigen::VectorXd& delta);

BoundingBox bounding_box(std::span<const Vec2> points);

/// Places the mean shape (q = 0) at `orientation` so that its projected box
/// is centered on `bbox` and matches its width.
PdmParams init_from_bbox(const PdmModel& model, const BoundingBox& bbox, const Vec3& orientation);

/// Inter-ocular distance of the mean shape in model units; falls back to the
/// mean shape's width when no eye corners are configured.
double reference_length(const PdmModel& model);

/// Number of landmarks in the canonical synthetic face layout.
inline constexpr int kFaceLayoutLandmarks = 12;

/// Synthetic 12-landmark face model with eye corners (0, 3).
PdmModel face_layout_pdm(int n_modes, std::uint64_t seed);

/// Synthetic model with `n_landmarks` points scattered over a face-sized ellipsoid.
PdmModel random_pdm(int n_landmarks, int n_modes, std::uint64_t seed);

/// Left/right landmark permutation of the face layout (used to mirror detectors).
std::vector<int> face_layout_mirror();

} // namespace clmfit
