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

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clmfit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Failure classes. Each maps onto one CLI exit code and one C API status.
enum class ErrorKind { io, validation, numerical, config };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message)
{
    throw Error(kind, message);
}

/// Axis-aligned box in image pixels; (x, y) is the top-left corner.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double width = 0.0;
    double height = 0.0;

    Vec2 center() const { return {x + 0.5 * width, y + 0.5 * height}; }
};

/**
 * Grayscale image with double-valued pixels stored row-major. Pixel (x, y)
 * has its center at integer coordinates (x, y).
 */
class Image {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }

    double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    // Bilinear interpolation; coordinates outside the image are clamped to the border.
    double sample(double x, double y) const;

    std::span<const double> pixels() const { return data_; }
    std::span<double> pixels() { return data_; }

    bool operator==(const Image&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

} // namespace clmfit
