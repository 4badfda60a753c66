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
#include "clmfit/common.hpp"

#include <algorithm>
#include <cmath>

namespace clmfit {

Image::Image(int width, int height, double fill)
{
    if (width <= 0 || height <= 0) {
        fail(ErrorKind::validation, "image dimensions must be positive");
    }
    width_ = width;
    height_ = height;
    data_.assign(static_cast<std::size_t>(width) * height, fill);
}

double Image::sample(double x, double y) const
{
    if (empty()) {
        fail(ErrorKind::validation, "sampling an empty image");
    }
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * at(x0, y0) + fx * at(x1, y0);
    const double bottom = (1.0 - fx) * at(x0, y1) + fx * at(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

} // namespace clmfit
