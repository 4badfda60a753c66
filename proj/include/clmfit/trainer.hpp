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
#include "clmfit/synth.hpp"

#include <cstdint>
#include <filesystem>

namespace clmfit {

struct TrainConfig {
    double learning_rate = 5e-4;
    int epochs = 100;
    int batch_size = 512;
    double label_sigma = 1.0;           // px, ground-truth Gaussian
    std::uint64_t seed = 0;
    bool enforce_nonneg = true;         // project combiner weights onto w >= 0
};

void validate(const TrainConfig& cfg);

/// Toy channel counts for desk-scale training.
inline constexpr CenArch kToyArch{16, 8, 6};

enum class Split { train, test };

struct PatchSample {
    Eigen::MatrixXd roi;                // n x n intensities
    Eigen::MatrixXd label;              // (n - 10) x (n - 10), values in [0, 1]
    Vec2 offset = Vec2::Zero();         // true landmark relative to the ROI center
    int prototype = 0;
};

struct PatchDataset {
    std::vector<PatchSample> samples;
    Split split = Split::train;

    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
};

/// Geometry and appearance of generated training patches.
struct PatchSpec {
    int roi_size = 19;
    double max_offset = 4.0;            // uniform in [-max, max] per axis
    AppearanceSpec look;
};

/// Gaussian label map for a landmark at `offset` from the center of an n x n ROI.
Eigen::MatrixXd gaussian_label(int roi_size, const Vec2& offset, double sigma);

/**
 * Renders `count` patches, each holding one landmark with a randomly drawn
 * prototype, contrast, brightness and noise at a random sub-pixel offset.
 * The test split draws from a different stream of the same seed.
 */
PatchDataset gen_synthetic_patches(const TrainConfig& cfg, int count, const PatchSpec& spec = {},
                                   Split split = Split::train);

/// Patches cut from rendered scenes around every visible landmark (working
/// frame at `scale_px` for a model of reference length `ref_length`), each at
/// a random offset drawn from `rng`.
void append_scene_patches(PatchDataset& data, const SyntheticScene& scene, double ref_length, int scale_px,
                          const PatchSpec& spec, double label_sigma, std::mt19937_64& rng);

/// Small random weights; combiner weights start positive in both ablation arms.
CenModel init_cen(const CenArch& arch, std::uint64_t seed);

/// Mean per-pixel binary cross-entropy and its gradient (same layout as the model).
struct LossGradient {
    double loss = 0.0;
    CenModel gradient;
};

/// `windows[k]` holds the normalized windows of data.samples[k]; `indices` picks the batch.
LossGradient loss_and_gradient(const CenModel& model, const std::vector<Eigen::MatrixXd>& windows,
                               const PatchDataset& data, std::span<const std::size_t> indices);

/// Loss only, over the whole dataset.
double dataset_loss(const CenModel& model, const std::vector<Eigen::MatrixXd>& windows, const PatchDataset& data);

struct DetectorScore {
    double r2 = 0.0;
    double rmse = 0.0;
};

/// Squared Pearson correlation (0 when either side has zero variance) and RMSE.
DetectorScore score_predictions(std::span<const double> predicted, std::span<const double> truth);
DetectorScore evaluate_detector(const CenModel& model, const PatchDataset& test);

struct EpochRecord {
    int epoch = 0;                      // 0 is the untrained model
    double train_loss = 0.0;
    double test_r2 = 0.0;
    double test_rmse = 0.0;
};

struct TrainResult {
    CenModel model;
    std::vector<EpochRecord> curve;
};

/**
 * Adam on the mean BCE. With enforce_nonneg the combiner weights are
 * clamped at zero after every step. Test metrics are NaN when `test` is empty.
 * Throws ErrorKind::numerical when the loss stops being finite.
 */
TrainResult train_cen(const PatchDataset& train, const PatchDataset& test, const TrainConfig& cfg,
                      const CenArch& arch = kToyArch);

/// Columns: epoch, train_loss, test_r2, test_rmse.
void save_loss_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

} // namespace clmfit
