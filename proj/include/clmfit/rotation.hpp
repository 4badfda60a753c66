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

namespace clmfit {

/// Below this angle the exponential map switches to its Taylor expansion.
inline constexpr double kSmallAngle = 1e-7;

Mat3 skew(const Vec3& w);

/// Exponential map so(3) -> SO(3) (Rodrigues).
Mat3 rotation_from_axis_angle(const Vec3& w);

/// Logarithm map SO(3) -> so(3); the returned angle lies in [0, pi].
Vec3 axis_angle_from_rotation(const Mat3& rotation);

/// Euler angles in radians, composed as R = Rx(pitch) * Ry(yaw) * Rz(roll).
struct EulerAngles {
    double pitch = 0.0;
    double yaw = 0.0;
    double roll = 0.0;
};

Mat3 rotation_from_euler(const EulerAngles& euler);
EulerAngles euler_from_rotation(const Mat3& rotation);

inline Vec3 axis_angle_from_euler(const EulerAngles& euler)
{
    return axis_angle_from_rotation(rotation_from_euler(euler));
}

/// Yaw (rotation about the vertical axis) of an axis-angle orientation.
double yaw_of(const Vec3& axis_angle);

/// Angle of the face x-axis in the image plane, used to orient regions of interest.
double in_plane_angle(const Mat3& rotation);

inline double deg2rad(double degrees) { return degrees * 3.14159265358979323846 / 180.0; }
inline double rad2deg(double radians) { return radians * 180.0 / 3.14159265358979323846; }

} // namespace clmfit
