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
#include "clmfit/rotation.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace clmfit {

Mat3 skew(const Vec3& w)
{
    Mat3 k;
    k << 0.0, -w.z(), w.y(),
         w.z(), 0.0, -w.x(),
         -w.y(), w.x(), 0.0;
    return k;
}

Mat3 rotation_from_axis_angle(const Vec3& w)
{
    const double theta = w.norm();
    const Mat3 k = skew(w);
    if (theta < kSmallAngle) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    return Mat3::Identity() + (std::sin(theta) / theta) * k
        + ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

Vec3 axis_angle_from_rotation(const Mat3& rotation)
{
    // Eigen goes through a quaternion, which stays well conditioned near 0 and pi.
    const Eigen::AngleAxisd aa(rotation);
    return aa.angle() * aa.axis();
}

Mat3 rotation_from_euler(const EulerAngles& e)
{
    const Eigen::AngleAxisd rx(e.pitch, Vec3::UnitX());
    const Eigen::AngleAxisd ry(e.yaw, Vec3::UnitY());
    const Eigen::AngleAxisd rz(e.roll, Vec3::UnitZ());
    return (rx * ry * rz).toRotationMatrix();
}

EulerAngles euler_from_rotation(const Mat3& r)
{
    // Inverse of Rx * Ry * Rz: r(0,2) = sin(yaw).
    EulerAngles e;
    e.yaw = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
    e.pitch = std::atan2(-r(1, 2), r(2, 2));
    e.roll = std::atan2(-r(0, 1), r(0, 0));
    return e;
}

double yaw_of(const Vec3& axis_angle)
{
    return euler_from_rotation(rotation_from_axis_angle(axis_angle)).yaw;
}

double in_plane_angle(const Mat3& rotation)
{
    return std::atan2(rotation(1, 0), rotation(0, 0));
}

} // namespace clmfit
