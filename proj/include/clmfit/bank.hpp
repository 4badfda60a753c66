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

#include "clmfit/cen.hpp"

#include <compare>
#include <map>
#include <memory>
#include <mutex>

namespace clmfit {

/**
 * Detectors indexed by (landmark, view, scale).
 *
 * Views are yaw orientations. A view whose mirror image (negated yaw) is
 * stored but which is not stored itself is still served: its detectors are
 * the stored mirror-side detectors of the mirror landmark with flipped
 * kernels. Mirrored models are built on first request and cached.
 */
class CenBank {
public:
    CenBank() = default;
    CenBank(std::vector<double> views_yaw_deg, std::vector<int> scales_px,
            std::vector<int> mirror_landmarks = {});

    /// The model's `view` indexes the stored view table.
    void add(CenModel model);
    void set_occluded(int view, std::vector<int> landmarks);

    const std::vector<double>& stored_views_deg() const { return stored_views_; }
    /// Stored views followed by views reachable only by mirroring.
    std::vector<double> views_deg() const;
    const std::vector<int>& scales() const { return scales_; }
    const std::vector<int>& mirror_landmarks() const { return mirror_; }
    const std::map<int, std::vector<int>>& occlusions() const { return occluded_; }

    /// Landmark index of the left/right counterpart (identity when unset).
    int mirror_of(int landmark) const;

    /// nullptr when (landmark, view, scale) cannot be resolved.
    std::shared_ptr<const CenModel> find(int landmark, int view, int scale_px) const;
    bool occluded(int landmark, int view) const;

    /// Throws ErrorKind::config naming the first unresolvable key.
    void check_complete(int n_landmarks, std::span<const int> scales_px) const;

    /// Stored models in key order.
    std::vector<std::shared_ptr<const CenModel>> stored_models() const;

private:
    struct Key {
        int landmark;
        int view;
        int scale;
        auto operator<=>(const Key&) const = default;
    };
    struct MirrorCache {
        std::mutex mutex;
        std::map<Key, std::shared_ptr<const CenModel>> models;
    };

    std::shared_ptr<const CenModel> find_stored(int landmark, int view, int scale_px) const;
    // Stored view whose yaw is the negation of `view`'s yaw, or -1.
    int mirror_source(int view) const;

    std::vector<double> stored_views_;
    std::vector<double> mirror_only_views_;
    std::vector<int> scales_;
    std::vector<int> mirror_;
    std::map<Key, std::shared_ptr<const CenModel>> stored_;
    std::map<int, std::vector<int>> occluded_;
    std::shared_ptr<MirrorCache> cache_ = std::make_shared<MirrorCache>();
};

} // namespace clmfit
