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
#include "clmfit/nurlms.hpp"
#include "clmfit/pdm.hpp"
#include "clmfit/synth.hpp"

#include <filesystem>

// Versioned JSON formats. Every loader validates the domain invariants of
// what it returns; failures are ErrorKind::io for unreadable files and
// ErrorKind::validation for malformed or invalid content.
namespace clmfit::io {

inline constexpr int kFormatVersion = 1;

PdmModel load_pdm(const std::filesystem::path& path);
void save_pdm(const PdmModel& model, const std::filesystem::path& path);

/// `allow_negative_combiner` admits models trained without the non-negativity constraint.
CenModel load_cen(const std::filesystem::path& path, bool allow_negative_combiner = false);
void save_cen(const CenModel& model, const std::filesystem::path& path);

/// Reads manifest.json (or the given manifest file) and the per-model files it lists.
CenBank load_bank(const std::filesystem::path& path, bool allow_negative_combiner = false);
/// Writes one JSON file per stored model plus manifest.json into `dir`.
void save_bank(const CenBank& bank, const std::filesystem::path& dir);

LandmarkReliability load_reliability(const std::filesystem::path& path);
void save_reliability(const LandmarkReliability& reliability, const std::filesystem::path& path);

NurlmsConfig load_config(const std::filesystem::path& path);
void save_config(const NurlmsConfig& cfg, const std::filesystem::path& path);

/// 8-bit binary PGM (P5). Pixels are rounded and clamped to [0, 255] on save.
Image load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& image, const std::filesystem::path& path);

/// One row per landmark (id, x, y, visible) after a '#' header line with the fit summary.
void save_fit_csv(const FitResult& result, const std::filesystem::path& path);
LandmarkSet load_landmarks_csv(const std::filesystem::path& path);

/// Scene export: the image as PGM plus a sidecar JSON with the true
/// parameters, landmarks, visibility and prototype ids.
void save_scene(const SyntheticScene& scene, const PdmModel& model, const std::filesystem::path& pgm_path,
                const std::filesystem::path& json_path);
/// Reads a sidecar and, when `pgm_path` is non-empty, the image.
SyntheticScene load_scene(const std::filesystem::path& json_path, const std::filesystem::path& pgm_path = {});

/// Landmarks (and visibility) stored in a scene sidecar JSON.
LandmarkSet load_sidecar_landmarks(const std::filesystem::path& path);
/// Eye corner indices recorded in a sidecar, if any.
std::optional<std::array<int, 2>> load_sidecar_eye_corners(const std::filesystem::path& path);

/// Model reference length (IOD or mean-shape width) recorded by save_scene.
std::optional<double> load_sidecar_reference_length(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Round-trip exact decimal form of a double ("%.17g").
std::string format_double(double value);

} // namespace clmfit::io
