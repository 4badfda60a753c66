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
#include "clmfit/pdm.hpp"
#include "clmfit/rotation.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <random>

namespace clmfit {

namespace {

void check_dimensions(const PdmModel& model, const PdmParams& params)
{
    if (params.nonrigid.size() != model.n_modes()) {
        fail(ErrorKind::validation,
             "non-rigid parameter count " + std::to_string(params.nonrigid.size())
                 + " does not match model modes " + std::to_string(model.n_modes()));
    }
}

// Variance of the leading synthetic mode relative to the squared face size;
// later modes decay geometrically.
constexpr double kLeadingVariance = 0.08;
constexpr double kVarianceDecay = 0.6;

Eigen::MatrixXd synthetic_basis(const Eigen::VectorXd& mean, int n_modes, std::mt19937_64& rng)
{
    const Eigen::Index rows = mean.size();
    const int n = static_cast<int>(rows / 3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(rows, n_modes);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            g(r, c) = gauss(rng);
        }
    }

    // Keep deformation modes away from the similarity motions of the mean
    // shape when there is room, so q and the rigid parameters do not compete.
    if (rows >= n_modes + 7) {
        Eigen::MatrixXd rigid = Eigen::MatrixXd::Zero(rows, 7);
        for (int i = 0; i < n; ++i) {
            const Vec3 x = mean.segment<3>(3 * i);
            for (int a = 0; a < 3; ++a) {
                rigid(3 * i + a, a) = 1.0;
                rigid.block<3, 1>(3 * i, 4 + a) = Vec3::Unit(a).cross(x);
            }
            rigid.block<3, 1>(3 * i, 3) = x;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(rigid);
        const Eigen::Index rank = qr.rank();
        const Eigen::MatrixXd q = Eigen::MatrixXd(qr.householderQ()).leftCols(rank);
        g -= q * (q.transpose() * g);
    }

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd basis = Eigen::MatrixXd(qr.householderQ()).leftCols(n_modes);
    // Sign convention: the largest-magnitude entry of each column is positive.
    for (int c = 0; c < n_modes; ++c) {
        Eigen::Index arg = 0;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, c) < 0.0) {
            basis.col(c) *= -1.0;
        }
    }
    return basis;
}

Eigen::VectorXd synthetic_eigenvalues(int n_modes, double size)
{
    Eigen::VectorXd ev(n_modes);
    for (int j = 0; j < n_modes; ++j) {
        ev(j) = kLeadingVariance * size * size * std::pow(kVarianceDecay, j);
    }
    return ev;
}

Eigen::VectorXd centered(Eigen::VectorXd mean)
{
    const int n = static_cast<int>(mean.size() / 3);
    Vec3 c = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        c += mean.segment<3>(3 * i);
    }
    c /= n;
    for (int i = 0; i < n; ++i) {
        mean.segment<3>(3 * i) -= c;
    }
    return mean;
}

} // namespace

void validate(const PdmModel& model, double orthonormal_tol)
{
    if (model.mean.size() == 0 || model.mean.size() % 3 != 0) {
        fail(ErrorKind::validation, "pdm: mean length must be a positive multiple of 3");
    }
    if (model.basis.rows() != model.mean.size()) {
        fail(ErrorKind::validation, "pdm: basis has " + std::to_string(model.basis.rows())
                                        + " rows, expected " + std::to_string(model.mean.size()));
    }
    if (model.eigenvalues.size() != model.basis.cols()) {
        fail(ErrorKind::validation, "pdm: eigenvalue count does not match basis columns");
    }
    for (Eigen::Index j = 0; j < model.eigenvalues.size(); ++j) {
        if (!(model.eigenvalues(j) > 0.0) || !std::isfinite(model.eigenvalues(j))) {
            fail(ErrorKind::validation, "pdm: eigenvalues[" + std::to_string(j) + "] must be positive");
        }
    }
    if (!model.mean.allFinite() || !model.basis.allFinite()) {
        fail(ErrorKind::validation, "pdm: non-finite mean or basis entry");
    }
    const Eigen::MatrixXd gram = model.basis.transpose() * model.basis;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    if ((gram - eye).cwiseAbs().maxCoeff() > orthonormal_tol && gram.size() > 0) {
        fail(ErrorKind::validation, "pdm: basis columns are not orthonormal");
    }
    if (model.eye_corners) {
        for (int idx : *model.eye_corners) {
            if (idx < 0 || idx >= model.n_landmarks()) {
                fail(ErrorKind::validation, "pdm: eye corner index out of range");
            }
        }
        if ((*model.eye_corners)[0] == (*model.eye_corners)[1]) {
            fail(ErrorKind::validation, "pdm: eye corner indices must differ");
        }
    }
}

PdmParams PdmParams::neutral(const PdmModel& model)
{
    PdmParams p;
    p.nonrigid = Eigen::VectorXd::Zero(model.n_modes());
    return p;
}

Eigen::VectorXd PdmParams::to_vector() const
{
    Eigen::VectorXd v(kRigidParams + nonrigid.size());
    v << scale, translation, rotation, nonrigid;
    return v;
}

PdmParams PdmParams::from_vector(const Eigen::VectorXd& packed)
{
    if (packed.size() < kRigidParams) {
        fail(ErrorKind::validation, "packed parameter vector shorter than the rigid block");
    }
    PdmParams p;
    p.scale = packed(0);
    p.translation = packed.segment<2>(1);
    p.rotation = packed.segment<3>(3);
    p.nonrigid = packed.tail(packed.size() - kRigidParams);
    return p;
}

Eigen::MatrixXd shape_3d(const PdmModel& model, const Eigen::VectorXd& nonrigid)
{
    const Eigen::VectorXd flat = model.mean + model.basis * nonrigid;
    const int n = model.n_landmarks();
    Eigen::MatrixXd shape(n, 3);
    for (int i = 0; i < n; ++i) {
        shape.row(i) = flat.segment<3>(3 * i).transpose();
    }
    return shape;
}

LandmarkSet shape_from_params(const PdmModel& model, const PdmParams& params)
{
    check_dimensions(model, params);
    const Mat3 r = rotation_from_axis_angle(params.rotation);
    const Eigen::MatrixXd shape = shape_3d(model, params.nonrigid);
    LandmarkSet out;
    out.points.reserve(shape.rows());
    for (Eigen::Index i = 0; i < shape.rows(); ++i) {
        const Vec3 rotated = r * shape.row(i).transpose();
        out.points.emplace_back(params.scale * rotated.head<2>() + params.translation);
    }
    out.visible.assign(out.points.size(), true);
    return out;
}

Eigen::MatrixXd jacobian(const PdmModel& model, const PdmParams& params)
{
    check_dimensions(model, params);
    const int n = model.n_landmarks();
    const int m = model.n_modes();
    const double s = params.scale;
    const Mat3 r = rotation_from_axis_angle(params.rotation);
    const Eigen::MatrixXd shape = shape_3d(model, params.nonrigid);

    Eigen::MatrixXd j(2 * n, kRigidParams + m);
    for (int i = 0; i < n; ++i) {
        const Vec3 y = r * shape.row(i).transpose();
        const int rx = i;
        const int ry = n + i;

        j(rx, 0) = y.x();
        j(ry, 0) = y.y();

        j(rx, 1) = 1.0;
        j(ry, 1) = 0.0;
        j(rx, 2) = 0.0;
        j(ry, 2) = 1.0;

        // d/d(dw) of P * (dw x y) = -P * [y]x
        j(rx, 3) = 0.0;
        j(rx, 4) = s * y.z();
        j(rx, 5) = -s * y.y();
        j(ry, 3) = -s * y.z();
        j(ry, 4) = 0.0;
        j(ry, 5) = s * y.x();

        const Eigen::MatrixXd rotated_modes = r * model.basis.middleRows<3>(3 * i);
        j.block(rx, kRigidParams, 1, m) = s * rotated_modes.row(0);
        j.block(ry, kRigidParams, 1, m) = s * rotated_modes.row(1);
    }
    return j;
}

double regularization(const PdmModel& model, const PdmParams& params)
{
    check_dimensions(model, params);
    return (params.nonrigid.array().square() / model.eigenvalues.array()).sum();
}

PdmParams apply_update(const PdmParams& params, const Eigen::VectorXd& delta)
{
    if (delta.size() != kRigidParams + params.nonrigid.size()) {
        fail(ErrorKind::validation, "parameter update has the wrong length");
    }
    PdmParams out = params;
    out.scale += delta(0);
    out.translation += delta.segment<2>(1);
    const Mat3 composed = rotation_from_axis_angle(delta.segment<3>(3))
        * rotation_from_axis_angle(params.rotation);
    out.rotation = axis_angle_from_rotation(composed);
    out.nonrigid += delta.tail(params.nonrigid.size());
    return out;
}

BoundingBox bounding_box(std::span<const Vec2> points)
{
    if (points.empty()) {
        fail(ErrorKind::validation, "bounding box of an empty point set");
    }
    Vec2 lo = points.front();
    Vec2 hi = points.front();
    for (const Vec2& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return {lo.x(), lo.y(), hi.x() - lo.x(), hi.y() - lo.y()};
}

PdmParams init_from_bbox(const PdmModel& model, const BoundingBox& bbox, const Vec3& orientation)
{
    if (!(bbox.width > 0.0) || !(bbox.height > 0.0)) {
        fail(ErrorKind::validation, "degenerate bounding box");
    }
    PdmParams unit = PdmParams::neutral(model);
    unit.rotation = orientation;
    const LandmarkSet projected = shape_from_params(model, unit);
    const BoundingBox base = bounding_box(projected.points);
    if (!(base.width > 0.0)) {
        fail(ErrorKind::validation, "model projects to zero width at this orientation");
    }

    PdmParams p = unit;
    p.scale = bbox.width / base.width;
    p.translation = bbox.center() - p.scale * base.center();
    return p;
}

double reference_length(const PdmModel& model)
{
    if (model.eye_corners) {
        const auto [a, b] = *model.eye_corners;
        const Vec2 pa = model.mean.segment<2>(3 * a);
        const Vec2 pb = model.mean.segment<2>(3 * b);
        return (pa - pb).norm();
    }
    std::vector<Vec2> pts;
    for (int i = 0; i < model.n_landmarks(); ++i) {
        pts.emplace_back(model.mean.segment<2>(3 * i));
    }
    return bounding_box(pts).width;
}

PdmModel face_layout_pdm(int n_modes, std::uint64_t seed)
{
    // Image convention: x right, y down, z toward the camera. Units are
    // inter-ocular distances (outer eye corners sit 1.0 apart).
    static constexpr double layout[kFaceLayoutLandmarks][3] = {
        {-0.50, -0.20, -0.10},  // 0  outer eye corner, left
        {-0.18, -0.20, -0.02},  // 1  inner eye corner, left
        {0.18, -0.20, -0.02},   // 2  inner eye corner, right
        {0.50, -0.20, -0.10},   // 3  outer eye corner, right
        {-0.35, -0.52, 0.00},   // 4  brow, left
        {0.35, -0.52, 0.00},    // 5  brow, right
        {0.00, 0.15, 0.35},     // 6  nose tip
        {-0.30, 0.50, 0.05},    // 7  mouth corner, left
        {0.30, 0.50, 0.05},     // 8  mouth corner, right
        {0.00, 0.90, 0.00},     // 9  chin
        {-0.72, 0.42, -0.30},   // 10 jaw, left
        {0.72, 0.42, -0.30},    // 11 jaw, right
    };
    if (n_modes < 0 || n_modes > 3 * kFaceLayoutLandmarks) {
        fail(ErrorKind::validation, "face layout supports at most 36 modes");
    }
    Eigen::VectorXd mean(3 * kFaceLayoutLandmarks);
    for (int i = 0; i < kFaceLayoutLandmarks; ++i) {
        mean.segment<3>(3 * i) = Vec3(layout[i][0], layout[i][1], layout[i][2]);
    }
    std::mt19937_64 rng(seed);
    PdmModel model;
    model.mean = centered(mean);
    model.basis = synthetic_basis(model.mean, n_modes, rng);
    model.eigenvalues = synthetic_eigenvalues(n_modes, 1.0);
    model.eye_corners = std::array<int, 2>{0, 3};
    return model;
}

std::vector<int> face_layout_mirror()
{
    return {3, 2, 1, 0, 5, 4, 6, 8, 7, 9, 11, 10};
}

PdmModel random_pdm(int n_landmarks, int n_modes, std::uint64_t seed)
{
    if (n_landmarks < 2) {
        fail(ErrorKind::validation, "random pdm needs at least two landmarks");
    }
    if (n_modes < 0 || n_modes > 3 * n_landmarks) {
        fail(ErrorKind::validation, "random pdm: too many modes for the landmark count");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Eigen::VectorXd mean(3 * n_landmarks);
    for (int i = 0; i < n_landmarks; ++i) {
        const double x = 0.7 * unit(rng);
        const double y = 0.9 * unit(rng);
        const double z = 0.35 * std::sqrt(std::max(0.0, 1.0 - (x * x) / 0.49 - (y * y) / 0.81));
        mean.segment<3>(3 * i) = Vec3(x, y, z);
    }
    PdmModel model;
    model.mean = centered(mean);
    model.basis = synthetic_basis(model.mean, n_modes, rng);
    Eigen::Index lo = 0;
    Eigen::Index hi = 0;
    Eigen::VectorXd xs(n_landmarks);
    for (int i = 0; i < n_landmarks; ++i) {
        xs(i) = model.mean(3 * i);
    }
    xs.minCoeff(&lo);
    xs.maxCoeff(&hi);
    model.eye_corners = std::array<int, 2>{static_cast<int>(lo), static_cast<int>(hi)};
    model.eigenvalues = synthetic_eigenvalues(n_modes, reference_length(model));
    return model;
}

} // namespace clmfit
