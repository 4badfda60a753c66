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
#include "clmfit/model_io.hpp"
#include "clmfit/rotation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace clmfit {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CenBank

CenBank::CenBank(std::vector<double> views_yaw_deg, std::vector<int> scales_px, std::vector<int> mirror_landmarks)
    : stored_views_(std::move(views_yaw_deg)), scales_(std::move(scales_px)), mirror_(std::move(mirror_landmarks))
{
    if (stored_views_.empty()) {
        fail(ErrorKind::validation, "bank: view table is empty");
    }
    if (scales_.empty()) {
        fail(ErrorKind::validation, "bank: scale list is empty");
    }
    if (!std::is_sorted(scales_.begin(), scales_.end())
        || std::adjacent_find(scales_.begin(), scales_.end()) != scales_.end()) {
        fail(ErrorKind::validation, "bank: scales must be strictly ascending");
    }
    for (std::size_t i = 0; i < mirror_.size(); ++i) {
        const int j = mirror_[i];
        if (j < 0 || j >= static_cast<int>(mirror_.size()) || mirror_[j] != static_cast<int>(i)) {
            fail(ErrorKind::validation, "bank: mirror_landmarks must be an involution, bad entry "
                                            + std::to_string(i));
        }
    }
    for (double yaw : stored_views_) {
        const bool stored = std::any_of(stored_views_.begin(), stored_views_.end(),
                                        [&](double v) { return std::abs(v + yaw) < 1e-9; });
        const bool listed = std::any_of(mirror_only_views_.begin(), mirror_only_views_.end(),
                                        [&](double v) { return std::abs(v + yaw) < 1e-9; });
        if (!stored && !listed) {
            mirror_only_views_.push_back(-yaw);
        }
    }
}

void CenBank::add(CenModel model)
{
    if (model.view < 0 || model.view >= static_cast<int>(stored_views_.size())) {
        fail(ErrorKind::validation, "bank: model view " + std::to_string(model.view) + " is not in the view table");
    }
    if (!std::binary_search(scales_.begin(), scales_.end(), model.scale_px)) {
        fail(ErrorKind::validation, "bank: model scale " + std::to_string(model.scale_px)
                                        + " is not in the scale list");
    }
    if (model.landmark < 0) {
        fail(ErrorKind::validation, "bank: negative landmark index");
    }
    const Key key{model.landmark, model.view, model.scale_px};
    stored_[key] = std::make_shared<const CenModel>(std::move(model));
}

void CenBank::set_occluded(int view, std::vector<int> landmarks)
{
    if (view < 0 || view >= static_cast<int>(stored_views_.size())) {
        fail(ErrorKind::validation, "bank: occlusion entry for unknown view");
    }
    std::sort(landmarks.begin(), landmarks.end());
    occluded_[view] = std::move(landmarks);
}

std::vector<double> CenBank::views_deg() const
{
    std::vector<double> all = stored_views_;
    all.insert(all.end(), mirror_only_views_.begin(), mirror_only_views_.end());
    return all;
}

int CenBank::mirror_of(int landmark) const
{
    if (landmark >= 0 && landmark < static_cast<int>(mirror_.size())) {
        return mirror_[landmark];
    }
    return landmark;
}

std::shared_ptr<const CenModel> CenBank::find_stored(int landmark, int view, int scale_px) const
{
    const auto it = stored_.find(Key{landmark, view, scale_px});
    return it == stored_.end() ? nullptr : it->second;
}

int CenBank::mirror_source(int view) const
{
    const std::vector<double> all = views_deg();
    if (view < 0 || view >= static_cast<int>(all.size())) {
        return -1;
    }
    for (std::size_t u = 0; u < stored_views_.size(); ++u) {
        if (std::abs(stored_views_[u] + all[view]) < 1e-9) {
            return static_cast<int>(u);
        }
    }
    return -1;
}

std::shared_ptr<const CenModel> CenBank::find(int landmark, int view, int scale_px) const
{
    if (view < static_cast<int>(stored_views_.size())) {
        if (auto direct = find_stored(landmark, view, scale_px)) {
            return direct;
        }
    }
    const int source_view = mirror_source(view);
    if (source_view < 0) {
        return nullptr;
    }
    const Key key{landmark, view, scale_px};
    std::lock_guard lock(cache_->mutex);
    if (const auto it = cache_->models.find(key); it != cache_->models.end()) {
        return it->second;
    }
    const auto source = find_stored(mirror_of(landmark), source_view, scale_px);
    if (!source) {
        return nullptr;
    }
    CenModel flipped = mirrored(*source);
    flipped.landmark = landmark;
    flipped.view = view;
    auto model = std::make_shared<const CenModel>(std::move(flipped));
    cache_->models.emplace(key, model);
    return model;
}

bool CenBank::occluded(int landmark, int view) const
{
    int stored_view = view;
    int stored_landmark = landmark;
    if (view >= static_cast<int>(stored_views_.size())) {
        stored_view = mirror_source(view);
        stored_landmark = mirror_of(landmark);
    }
    const auto it = occluded_.find(stored_view);
    return it != occluded_.end() && std::binary_search(it->second.begin(), it->second.end(), stored_landmark);
}

void CenBank::check_complete(int n_landmarks, std::span<const int> scales_px) const
{
    const int views = static_cast<int>(views_deg().size());
    for (int scale : scales_px) {
        for (int view = 0; view < views; ++view) {
            for (int l = 0; l < n_landmarks; ++l) {
                if (!occluded(l, view) && !find(l, view, scale)) {
                    fail(ErrorKind::config, "bank: missing detector (landmark " + std::to_string(l) + ", view "
                                                + std::to_string(view) + ", scale " + std::to_string(scale) + ")");
                }
            }
        }
    }
}

std::vector<std::shared_ptr<const CenModel>> CenBank::stored_models() const
{
    std::vector<std::shared_ptr<const CenModel>> out;
    for (const auto& [key, model] : stored_) {
        out.push_back(model);
    }
    return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace io {

namespace {

json parse_json(const fs::path& path)
{
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::validation, path.string() + ": malformed JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& j)
{
    write_text(path, j.dump(1) + "\n");
}

void check_version(const json& j, const fs::path& path)
{
    if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer()
        || j["version"].get<int>() != kFormatVersion) {
        fail(ErrorKind::validation, path.string() + ": unsupported or missing format version");
    }
}

template <typename T>
T get(const json& j, const char* key, const fs::path& path)
{
    if (!j.contains(key)) {
        fail(ErrorKind::validation, path.string() + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::validation, path.string() + ": field '" + key + "' has the wrong type");
    }
}

Eigen::VectorXd to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> from_vector(const Eigen::VectorXd& v)
{
    return {v.data(), v.data() + v.size()};
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const char* field, const fs::path& path)
{
    const auto cols = rows.empty() ? 0 : rows.front().size();
    Eigen::MatrixXd m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) {
            fail(ErrorKind::validation, path.string() + ": ragged rows in '" + field + "' at row " + std::to_string(r));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(r, c) = rows[r][c];
        }
    }
    return m;
}

json matrix_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

json params_json(const PdmParams& p)
{
    return {{"scale", p.scale},
            {"translation", {p.translation.x(), p.translation.y()}},
            {"rotation", {p.rotation.x(), p.rotation.y(), p.rotation.z()}},
            {"nonrigid", from_vector(p.nonrigid)}};
}

PdmParams params_from_json(const json& j, const fs::path& path)
{
    PdmParams p;
    p.scale = get<double>(j, "scale", path);
    const auto t = get<std::vector<double>>(j, "translation", path);
    const auto w = get<std::vector<double>>(j, "rotation", path);
    if (t.size() != 2 || w.size() != 3) {
        fail(ErrorKind::validation, path.string() + ": bad translation/rotation length");
    }
    p.translation = Vec2(t[0], t[1]);
    p.rotation = Vec3(w[0], w[1], w[2]);
    p.nonrigid = to_vector(get<std::vector<double>>(j, "nonrigid", path));
    if (!(p.scale > 0.0)) {
        fail(ErrorKind::validation, path.string() + ": scale must be positive");
    }
    return p;
}

json cen_json(const CenModel& m)
{
    json kernels = json::array();
    for (Eigen::Index k = 0; k < m.kernels.rows(); ++k) {
        Eigen::MatrixXd kernel(kKernelSize, kKernelSize);
        for (int y = 0; y < kKernelSize; ++y) {
            for (int x = 0; x < kKernelSize; ++x) {
                kernel(y, x) = m.kernels(k, y * kKernelSize + x);
            }
        }
        kernels.push_back(matrix_json(kernel));
    }
    return {{"version", kFormatVersion},
            {"landmark", m.landmark},
            {"view", m.view},
            {"scale_px", m.scale_px},
            {"c1", {{"w", kernels}, {"b", from_vector(m.kernel_bias)}}},
            {"c2", {{"w", matrix_json(m.hidden_weights)}, {"b", from_vector(m.hidden_bias)}}},
            {"c3", {{"w", matrix_json(m.expert_weights)}, {"b", from_vector(m.expert_bias)}}},
            {"combiner", {{"w", from_vector(m.combiner_weights)}, {"b", m.combiner_bias}}}};
}

CenModel cen_from_json(const json& j, const fs::path& path, bool allow_negative)
{
    check_version(j, path);
    CenModel m;
    m.landmark = get<int>(j, "landmark", path);
    m.view = get<int>(j, "view", path);
    m.scale_px = get<int>(j, "scale_px", path);
    for (const char* layer : {"c1", "c2", "c3", "combiner"}) {
        if (!j.contains(layer) || !j[layer].is_object()) {
            fail(ErrorKind::validation, path.string() + ": missing layer '" + layer + "'");
        }
    }
    const auto kernels = get<std::vector<std::vector<std::vector<double>>>>(j["c1"], "w", path);
    m.kernels.resize(static_cast<Eigen::Index>(kernels.size()), kKernelArea);
    for (std::size_t k = 0; k < kernels.size(); ++k) {
        if (kernels[k].size() != kKernelSize) {
            fail(ErrorKind::validation, path.string() + ": c1.w[" + std::to_string(k) + "] is not 11x11");
        }
        for (int y = 0; y < kKernelSize; ++y) {
            if (kernels[k][y].size() != kKernelSize) {
                fail(ErrorKind::validation, path.string() + ": c1.w[" + std::to_string(k) + "] is not 11x11");
            }
            for (int x = 0; x < kKernelSize; ++x) {
                m.kernels(static_cast<Eigen::Index>(k), y * kKernelSize + x) = kernels[k][y][x];
            }
        }
    }
    m.kernel_bias = to_vector(get<std::vector<double>>(j["c1"], "b", path));
    m.hidden_weights = to_matrix(get<std::vector<std::vector<double>>>(j["c2"], "w", path), "c2.w", path);
    m.hidden_bias = to_vector(get<std::vector<double>>(j["c2"], "b", path));
    m.expert_weights = to_matrix(get<std::vector<std::vector<double>>>(j["c3"], "w", path), "c3.w", path);
    m.expert_bias = to_vector(get<std::vector<double>>(j["c3"], "b", path));
    m.combiner_weights = to_vector(get<std::vector<double>>(j["combiner"], "w", path));
    m.combiner_bias = get<double>(j["combiner"], "b", path);
    try {
        validate(m, allow_negative);
    } catch (const Error& e) {
        fail(ErrorKind::validation, path.string() + ": " + e.what());
    }
    return m;
}

} // namespace

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot write " + path.string());
    }
    out << text;
    if (!out) {
        fail(ErrorKind::io, "write failed for " + path.string());
    }
}

std::string format_double(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

PdmModel load_pdm(const fs::path& path)
{
    const json j = parse_json(path);
    check_version(j, path);
    const int n = get<int>(j, "n", path);
    const int m = get<int>(j, "m", path);
    if (n < 1 || m < 0) {
        fail(ErrorKind::validation, path.string() + ": n must be positive and m non-negative");
    }
    PdmModel model;
    model.mean = to_vector(get<std::vector<double>>(j, "mean", path));
    if (model.mean.size() != 3 * n) {
        fail(ErrorKind::validation, path.string() + ": mean has " + std::to_string(model.mean.size())
                                        + " entries, expected 3n = " + std::to_string(3 * n));
    }
    const auto basis = get<std::vector<std::vector<double>>>(j, "basis", path);
    if (static_cast<int>(basis.size()) != 3 * n) {
        fail(ErrorKind::validation, path.string() + ": basis must have 3n rows");
    }
    model.basis.resize(3 * n, m);
    for (int r = 0; r < 3 * n; ++r) {
        if (static_cast<int>(basis[r].size()) != m) {
            fail(ErrorKind::validation, path.string() + ": basis row " + std::to_string(r) + " must have m entries");
        }
        for (int c = 0; c < m; ++c) {
            model.basis(r, c) = basis[r][c];
        }
    }
    model.eigenvalues = to_vector(get<std::vector<double>>(j, "eigenvalues", path));
    if (model.eigenvalues.size() != m) {
        fail(ErrorKind::validation, path.string() + ": eigenvalues must have m entries");
    }
    if (j.contains("eye_corners")) {
        const auto ec = get<std::vector<int>>(j, "eye_corners", path);
        if (ec.size() != 2) {
            fail(ErrorKind::validation, path.string() + ": eye_corners must hold two indices");
        }
        model.eye_corners = std::array<int, 2>{ec[0], ec[1]};
    }
    try {
        validate(model);
    } catch (const Error& e) {
        fail(ErrorKind::validation, path.string() + ": " + e.what());
    }
    return model;
}

void save_pdm(const PdmModel& model, const fs::path& path)
{
    validate(model);
    json j = {{"version", kFormatVersion},
              {"n", model.n_landmarks()},
              {"m", model.n_modes()},
              {"mean", from_vector(model.mean)},
              {"basis", matrix_json(model.basis)},
              {"eigenvalues", from_vector(model.eigenvalues)}};
    if (model.eye_corners) {
        j["eye_corners"] = {(*model.eye_corners)[0], (*model.eye_corners)[1]};
    }
    write_json(path, j);
}

CenModel load_cen(const fs::path& path, bool allow_negative_combiner)
{
    return cen_from_json(parse_json(path), path, allow_negative_combiner);
}

void save_cen(const CenModel& model, const fs::path& path)
{
    validate(model, true);
    write_json(path, cen_json(model));
}

CenBank load_bank(const fs::path& path, bool allow_negative_combiner)
{
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    const fs::path dir = manifest_path.parent_path();
    const json j = parse_json(manifest_path);
    check_version(j, manifest_path);

    std::vector<int> mirror;
    if (j.contains("mirror_landmarks")) {
        mirror = get<std::vector<int>>(j, "mirror_landmarks", manifest_path);
    }
    CenBank bank(get<std::vector<double>>(j, "views_yaw_deg", manifest_path),
                 get<std::vector<int>>(j, "scales_px", manifest_path), std::move(mirror));

    const auto models = get<json>(j, "models", manifest_path);
    if (!models.is_array()) {
        fail(ErrorKind::validation, manifest_path.string() + ": 'models' must be an array");
    }
    std::map<std::string, CenModel> parsed;
    for (std::size_t k = 0; k < models.size(); ++k) {
        const json& entry = models[k];
        const auto file = get<std::string>(entry, "file", manifest_path);
        auto it = parsed.find(file);
        if (it == parsed.end()) {
            it = parsed.emplace(file, load_cen(dir / file, allow_negative_combiner)).first;
        }
        CenModel model = it->second;
        // The manifest entry decides where a model is used; one file may serve several keys.
        model.landmark = get<int>(entry, "landmark", manifest_path);
        model.view = get<int>(entry, "view", manifest_path);
        model.scale_px = get<int>(entry, "scale", manifest_path);
        try {
            bank.add(std::move(model));
        } catch (const Error& e) {
            fail(ErrorKind::validation, manifest_path.string() + ": models[" + std::to_string(k) + "]: " + e.what());
        }
    }
    if (j.contains("occluded")) {
        for (const json& entry : get<json>(j, "occluded", manifest_path)) {
            bank.set_occluded(get<int>(entry, "view", manifest_path),
                              get<std::vector<int>>(entry, "landmarks", manifest_path));
        }
    }
    return bank;
}

void save_bank(const CenBank& bank, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot create " + dir.string());
    }
    json models = json::array();
    for (const auto& model : bank.stored_models()) {
        const std::string file = "cen_l" + std::to_string(model->landmark) + "_v" + std::to_string(model->view)
            + "_s" + std::to_string(model->scale_px) + ".json";
        save_cen(*model, dir / file);
        models.push_back({{"landmark", model->landmark}, {"view", model->view}, {"scale", model->scale_px},
                          {"file", file}});
    }
    json j = {{"version", kFormatVersion},
              {"views_yaw_deg", bank.stored_views_deg()},
              {"scales_px", bank.scales()},
              {"models", models}};
    if (!bank.mirror_landmarks().empty()) {
        j["mirror_landmarks"] = bank.mirror_landmarks();
    }
    if (!bank.occlusions().empty()) {
        json occ = json::array();
        for (const auto& [view, landmarks] : bank.occlusions()) {
            occ.push_back({{"view", view}, {"landmarks", landmarks}});
        }
        j["occluded"] = occ;
    }
    write_json(dir / "manifest.json", j);
}

LandmarkReliability load_reliability(const fs::path& path)
{
    const json j = parse_json(path);
    if (!j.is_array()) {
        fail(ErrorKind::validation, path.string() + ": reliability must be a JSON array");
    }
    std::vector<double> c;
    try {
        c = j.get<std::vector<double>>();
    } catch (const json::exception&) {
        fail(ErrorKind::validation, path.string() + ": reliability entries must be numbers");
    }
    LandmarkReliability r{to_vector(c)};
    try {
        validate(r, static_cast<int>(c.size()));
    } catch (const Error& e) {
        fail(ErrorKind::validation, path.string() + ": " + e.what());
    }
    return r;
}

void save_reliability(const LandmarkReliability& reliability, const fs::path& path)
{
    write_json(path, json(from_vector(reliability.c)));
}

NurlmsConfig load_config(const fs::path& path)
{
    const json j = parse_json(path);
    check_version(j, path);
    NurlmsConfig cfg;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            field = get<std::decay_t<decltype(field)>>(j, key, path);
        }
    };
    opt("rho", cfg.rho);
    opt("r", cfg.reg);
    opt("w", cfg.weight);
    opt("max_iters", cfg.max_iters);
    opt("convergence_tol", cfg.convergence_tol);
    opt("roi_schedule", cfg.roi_schedule);
    opt("accept_threshold", cfg.accept_threshold);
    opt("reject_threshold", cfg.reject_threshold);
    opt("extended_views", cfg.extended_views);
    opt("threads", cfg.threads);
    try {
        validate(cfg);
    } catch (const Error& e) {
        fail(ErrorKind::validation, path.string() + ": " + e.what());
    }
    return cfg;
}

void save_config(const NurlmsConfig& cfg, const fs::path& path)
{
    write_json(path, {{"version", kFormatVersion},
                      {"rho", cfg.rho},
                      {"r", cfg.reg},
                      {"w", cfg.weight},
                      {"max_iters", cfg.max_iters},
                      {"convergence_tol", cfg.convergence_tol},
                      {"roi_schedule", cfg.roi_schedule},
                      {"accept_threshold", cfg.accept_threshold},
                      {"reject_threshold", cfg.reject_threshold},
                      {"extended_views", cfg.extended_views},
                      {"threads", cfg.threads}});
}

Image load_pgm(const fs::path& path)
{
    const std::string data = read_text(path);
    std::istringstream in(data);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") {
        fail(ErrorKind::validation, path.string() + ": not a PGM file");
    }
    auto next_int = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        int v = -1;
        in >> v;
        if (!in) {
            fail(ErrorKind::validation, path.string() + ": truncated PGM header");
        }
        return v;
    };
    const int width = next_int();
    const int height = next_int();
    const int maxval = next_int();
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        fail(ErrorKind::validation, path.string() + ": unsupported PGM dimensions or depth");
    }
    Image image(width, height);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        const auto offset = static_cast<std::size_t>(in.tellg());
        if (data.size() < offset + static_cast<std::size_t>(width) * height) {
            fail(ErrorKind::validation, path.string() + ": truncated PGM pixel data");
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                image.at(x, y) = static_cast<unsigned char>(data[offset + static_cast<std::size_t>(y) * width + x]);
            }
        }
    } else {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                image.at(x, y) = next_int();
            }
        }
    }
    return image;
}

void save_pgm(const Image& image, const fs::path& path)
{
    std::string out = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    out.reserve(out.size() + image.pixels().size());
    for (double v : image.pixels()) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L))));
    }
    write_text(path, out);
}

void save_fit_csv(const FitResult& result, const fs::path& path)
{
    std::ostringstream out;
    out << "# map_score=" << format_double(result.map_score) << " iterations=" << result.total_iterations()
        << " hypothesis=" << result.hypothesis << " hypotheses_evaluated=" << result.hypotheses_evaluated
        << " low_confidence=" << (result.low_confidence ? 1 : 0) << "\n";
    out << "id,x,y,visible\n";
    for (std::size_t i = 0; i < result.landmarks.size(); ++i) {
        const Vec2& p = result.landmarks.points[i];
        out << i << "," << format_double(p.x()) << "," << format_double(p.y()) << ","
            << (result.landmarks.visible[i] ? 1 : 0) << "\n";
    }
    write_text(path, out.str());
}

LandmarkSet load_landmarks_csv(const fs::path& path)
{
    std::istringstream in(read_text(path));
    std::string line;
    LandmarkSet set;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("id,", 0) == 0) {
            continue;
        }
        std::istringstream row(line);
        std::string id, x, y, vis;
        if (!std::getline(row, id, ',') || !std::getline(row, x, ',') || !std::getline(row, y, ',')
            || !std::getline(row, vis, ',')) {
            fail(ErrorKind::validation, path.string() + ": malformed landmark row '" + line + "'");
        }
        try {
            if (std::stoul(id) != set.size()) {
                fail(ErrorKind::validation, path.string() + ": landmark ids must be consecutive from 0");
            }
            set.points.emplace_back(std::stod(x), std::stod(y));
            set.visible.push_back(std::stoi(vis) != 0);
        } catch (const std::logic_error&) {
            fail(ErrorKind::validation, path.string() + ": malformed landmark row '" + line + "'");
        }
    }
    return set;
}

void save_scene(const SyntheticScene& scene, const PdmModel& model, const fs::path& pgm_path, const fs::path& json_path)
{
    save_pgm(scene.image, pgm_path);
    json points = json::array();
    for (const Vec2& p : scene.true_landmarks.points) {
        points.push_back({p.x(), p.y()});
    }
    std::vector<int> visible;
    for (bool v : scene.true_landmarks.visible) {
        visible.push_back(v ? 1 : 0);
    }
    json j = {{"version", kFormatVersion},
              {"image", pgm_path.filename().string()},
              {"width", scene.image.width()},
              {"height", scene.image.height()},
              {"seed", scene.seed},
              {"params", params_json(scene.true_params)},
              {"landmarks", points},
              {"visible", visible},
              {"prototypes", scene.prototype_ids},
              {"reference_length", reference_length(model)}};
    if (model.eye_corners) {
        j["eye_corners"] = {(*model.eye_corners)[0], (*model.eye_corners)[1]};
    }
    write_json(json_path, j);
}

SyntheticScene load_scene(const fs::path& json_path, const fs::path& pgm_path)
{
    const json j = parse_json(json_path);
    check_version(j, json_path);
    SyntheticScene scene;
    scene.true_params = params_from_json(get<json>(j, "params", json_path), json_path);
    scene.true_landmarks = load_sidecar_landmarks(json_path);
    if (j.contains("prototypes")) {
        scene.prototype_ids = get<std::vector<int>>(j, "prototypes", json_path);
    }
    if (j.contains("seed")) {
        scene.seed = get<std::uint64_t>(j, "seed", json_path);
    }
    if (!pgm_path.empty()) {
        scene.image = load_pgm(pgm_path);
    }
    return scene;
}

LandmarkSet load_sidecar_landmarks(const fs::path& path)
{
    const json j = parse_json(path);
    check_version(j, path);
    const auto points = get<std::vector<std::vector<double>>>(j, "landmarks", path);
    LandmarkSet set;
    for (const auto& p : points) {
        if (p.size() != 2) {
            fail(ErrorKind::validation, path.string() + ": landmark entries must be [x, y]");
        }
        set.points.emplace_back(p[0], p[1]);
    }
    if (j.contains("visible")) {
        for (int v : get<std::vector<int>>(j, "visible", path)) {
            set.visible.push_back(v != 0);
        }
    } else {
        set.visible.assign(set.points.size(), true);
    }
    if (set.visible.size() != set.points.size()) {
        fail(ErrorKind::validation, path.string() + ": visible and landmarks differ in length");
    }
    return set;
}

std::optional<std::array<int, 2>> load_sidecar_eye_corners(const fs::path& path)
{
    const json j = parse_json(path);
    if (!j.contains("eye_corners")) {
        return std::nullopt;
    }
    const auto ec = get<std::vector<int>>(j, "eye_corners", path);
    if (ec.size() != 2) {
        fail(ErrorKind::validation, path.string() + ": eye_corners must hold two indices");
    }
    return std::array<int, 2>{ec[0], ec[1]};
}

std::optional<double> load_sidecar_reference_length(const fs::path& path)
{
    const json j = parse_json(path);
    if (!j.contains("reference_length")) {
        return std::nullopt;
    }
    const double v = get<double>(j, "reference_length", path);
    if (!(v > 0.0)) {
        fail(ErrorKind::validation, path.string() + ": reference_length must be positive");
    }
    return v;
}

} // namespace io
} // namespace clmfit
