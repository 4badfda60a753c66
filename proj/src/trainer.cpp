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
#include "clmfit/trainer.hpp"
#include "clmfit/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace clmfit {

namespace {

constexpr std::uint64_t kTestStream = 0x9e3779b97f4a7c15ULL;

double softplus(double z)
{
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

Eigen::VectorXd logits(const Eigen::MatrixXd& x, const CenModel& model)
{
    Eigen::MatrixXd corr = model.kernels * x;
    corr.colwise() += model.kernel_bias;
    Eigen::MatrixXd hidden = model.hidden_weights * corr;
    hidden.colwise() += model.hidden_bias;
    hidden = hidden.cwiseMax(0.0);
    Eigen::MatrixXd experts = model.expert_weights * hidden;
    experts.colwise() += model.expert_bias;
    experts = experts.unaryExpr([](double z) { return sigmoid(z); });
    Eigen::VectorXd z = experts.transpose() * model.combiner_weights;
    z.array() += model.combiner_bias;
    return z;
}

// Parameter blocks in packing order.
std::vector<double*> blocks(CenModel& m, std::vector<Eigen::Index>& sizes)
{
    sizes = {m.kernels.size(),        m.kernel_bias.size(),      m.hidden_weights.size(),
             m.hidden_bias.size(),    m.expert_weights.size(),   m.expert_bias.size(),
             m.combiner_weights.size(), 1};
    return {m.kernels.data(),        m.kernel_bias.data(),      m.hidden_weights.data(),
            m.hidden_bias.data(),    m.expert_weights.data(),   m.expert_bias.data(),
            m.combiner_weights.data(), &m.combiner_bias};
}

Eigen::VectorXd pack(const CenModel& model)
{
    CenModel& m = const_cast<CenModel&>(model);
    std::vector<Eigen::Index> sizes;
    const auto ptrs = blocks(m, sizes);
    Eigen::VectorXd out(std::accumulate(sizes.begin(), sizes.end(), Eigen::Index{0}));
    Eigen::Index at = 0;
    for (std::size_t b = 0; b < ptrs.size(); ++b) {
        out.segment(at, sizes[b]) = Eigen::Map<const Eigen::VectorXd>(ptrs[b], sizes[b]);
        at += sizes[b];
    }
    return out;
}

void unpack(const Eigen::VectorXd& flat, CenModel& m)
{
    std::vector<Eigen::Index> sizes;
    const auto ptrs = blocks(m, sizes);
    Eigen::Index at = 0;
    for (std::size_t b = 0; b < ptrs.size(); ++b) {
        Eigen::Map<Eigen::VectorXd>(ptrs[b], sizes[b]) = flat.segment(at, sizes[b]);
        at += sizes[b];
    }
}

// Offset and length of the combiner weights inside the packed vector.
std::pair<Eigen::Index, Eigen::Index> combiner_range(const CenModel& m)
{
    const Eigen::Index before = m.kernels.size() + m.kernel_bias.size() + m.hidden_weights.size()
        + m.hidden_bias.size() + m.expert_weights.size() + m.expert_bias.size();
    return {before, m.combiner_weights.size()};
}

std::vector<Eigen::MatrixXd> all_windows(const PatchDataset& data)
{
    std::vector<Eigen::MatrixXd> out;
    out.reserve(data.size());
    for (const auto& s : data.samples) {
        out.push_back(normalized_windows(s.roi));
    }
    return out;
}

Eigen::VectorXd flat_label(const Eigen::MatrixXd& label)
{
    // Row-major flattening, matching the window column order r * out + c.
    Eigen::VectorXd y(label.size());
    for (Eigen::Index r = 0; r < label.rows(); ++r) {
        for (Eigen::Index c = 0; c < label.cols(); ++c) {
            y(r * label.cols() + c) = label(r, c);
        }
    }
    return y;
}

DetectorScore evaluate_windows(const CenModel& model, const std::vector<Eigen::MatrixXd>& windows,
                               const PatchDataset& data)
{
    std::vector<double> pred;
    std::vector<double> truth;
    for (std::size_t k = 0; k < data.size(); ++k) {
        const Eigen::VectorXd p = forward_windows(windows[k], model);
        const Eigen::VectorXd y = flat_label(data.samples[k].label);
        pred.insert(pred.end(), p.data(), p.data() + p.size());
        truth.insert(truth.end(), y.data(), y.data() + y.size());
    }
    return score_predictions(pred, truth);
}

} // namespace

void validate(const TrainConfig& cfg)
{
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
        fail(ErrorKind::validation, "train: learning_rate must be positive");
    }
    if (cfg.batch_size < 1) {
        fail(ErrorKind::validation, "train: batch_size must be at least 1");
    }
    if (!(cfg.label_sigma > 0.0)) {
        fail(ErrorKind::validation, "train: label_sigma must be positive");
    }
    if (cfg.epochs < 0) {
        fail(ErrorKind::validation, "train: epochs must be non-negative");
    }
}

Eigen::MatrixXd gaussian_label(int roi_size, const Vec2& offset, double sigma)
{
    const int out = roi_size - (kKernelSize - 1);
    if (out < 1) {
        fail(ErrorKind::validation, "label: ROI smaller than the detector kernel");
    }
    const double half = 0.5 * (roi_size - 1);
    const int k = kKernelSize / 2;
    Eigen::MatrixXd label(out, out);
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < out; ++c) {
            const double dx = c + k - half - offset.x();
            const double dy = r + k - half - offset.y();
            label(r, c) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }
    return label;
}

PatchDataset gen_synthetic_patches(const TrainConfig& cfg, int count, const PatchSpec& spec, Split split)
{
    validate(cfg);
    if (spec.roi_size < kKernelSize) {
        fail(ErrorKind::validation, "patches: roi_size must be at least 11");
    }
    PatchDataset data;
    data.split = split;
    if (count <= 0) {
        return data;
    }
    const AppearanceSpec& look = spec.look;
    std::mt19937_64 rng(split == Split::test ? cfg.seed ^ kTestStream : cfg.seed);
    std::uniform_real_distribution<double> offset(-spec.max_offset, spec.max_offset);
    std::uniform_real_distribution<double> contrast(look.contrast_min, look.contrast_max);
    std::uniform_real_distribution<double> jitter(-look.brightness_jitter, look.brightness_jitter);
    std::normal_distribution<double> noise(0.0, 1.0);

    const int n = spec.roi_size;
    const double half = 0.5 * (n - 1);
    data.samples.reserve(count);
    for (int k = 0; k < count; ++k) {
        PatchSample s;
        s.offset = Vec2(offset(rng), offset(rng));
        s.prototype = sample_prototype(look.prototype_weights, rng);
        const double c = contrast(rng);
        Image patch(n, n, look.background + jitter(rng));
        stamp_landmark(patch, Vec2(half, half) + s.offset, s.prototype, c, look.feature_radius);
        s.roi.resize(n, n);
        for (int r = 0; r < n; ++r) {
            for (int col = 0; col < n; ++col) {
                s.roi(r, col) = patch.at(col, r) + (look.noise_sigma > 0.0 ? look.noise_sigma * noise(rng) : 0.0);
            }
        }
        s.label = gaussian_label(n, s.offset, cfg.label_sigma);
        data.samples.push_back(std::move(s));
    }
    return data;
}

void append_scene_patches(PatchDataset& data, const SyntheticScene& scene, double ref_length, int scale_px,
                          const PatchSpec& spec, double label_sigma, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> offset(-spec.max_offset, spec.max_offset);
    const Mat2 to_ref = working_frame(scene.true_params, scale_px, ref_length);
    for (std::size_t i = 0; i < scene.true_landmarks.size(); ++i) {
        if (!scene.true_landmarks.visible[i]) {
            continue;
        }
        PatchSample s;
        s.offset = Vec2(offset(rng), offset(rng));
        s.prototype = i < scene.prototype_ids.size() ? scene.prototype_ids[i] : 0;
        RoiRequest req;
        req.landmark = static_cast<int>(i);
        req.scale_px = scale_px;
        req.roi_size = spec.roi_size;
        req.to_ref = to_ref;
        req.center_ref = to_ref * scene.true_landmarks.points[i] - s.offset;
        s.roi = extract_roi(scene.image, req);
        s.label = gaussian_label(spec.roi_size, s.offset, label_sigma);
        data.samples.push_back(std::move(s));
    }
}

CenModel init_cen(const CenArch& arch, std::uint64_t seed)
{
    if (arch.correlation < 1 || arch.hidden < 1 || arch.experts < 1) {
        fail(ErrorKind::validation, "arch: channel counts must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill = [&](Eigen::MatrixXd& m, double stddev) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                m(r, c) = stddev * gauss(rng);
            }
        }
    };
    CenModel m = CenModel::zeros(arch);
    fill(m.kernels, 1.0 / kKernelSize);
    fill(m.hidden_weights, 1.0 / std::sqrt(arch.correlation));
    fill(m.expert_weights, std::sqrt(2.0 / arch.hidden));
    for (Eigen::Index j = 0; j < m.combiner_weights.size(); ++j) {
        m.combiner_weights(j) = std::abs(gauss(rng)) / std::sqrt(arch.experts);
    }
    m.combiner_bias = -2.0;
    return m;
}

LossGradient loss_and_gradient(const CenModel& model, const std::vector<Eigen::MatrixXd>& windows,
                               const PatchDataset& data, std::span<const std::size_t> indices)
{
    LossGradient out;
    out.gradient = CenModel::zeros(model.arch());
    out.gradient.landmark = model.landmark;
    out.gradient.view = model.view;
    out.gradient.scale_px = model.scale_px;
    CenModel& g = out.gradient;

    Eigen::Index pixels = 0;
    for (std::size_t k : indices) {
        pixels += windows.at(k).cols();
    }
    if (pixels == 0) {
        fail(ErrorKind::validation, "train: empty batch");
    }
    const double inv = 1.0 / static_cast<double>(pixels);

    for (std::size_t k : indices) {
        const Eigen::MatrixXd& x = windows[k];
        const Eigen::VectorXd y = flat_label(data.samples[k].label);

        Eigen::MatrixXd corr = model.kernels * x;
        corr.colwise() += model.kernel_bias;
        Eigen::MatrixXd hidden = model.hidden_weights * corr;
        hidden.colwise() += model.hidden_bias;
        const Eigen::MatrixXd active = (hidden.array() > 0.0).cast<double>();
        hidden = hidden.cwiseMax(0.0);
        Eigen::MatrixXd experts = model.expert_weights * hidden;
        experts.colwise() += model.expert_bias;
        experts = experts.unaryExpr([](double z) { return sigmoid(z); });
        Eigen::VectorXd logits = experts.transpose() * model.combiner_weights;
        logits.array() += model.combiner_bias;

        for (Eigen::Index p = 0; p < logits.size(); ++p) {
            out.loss += softplus(logits(p)) - y(p) * logits(p);
        }
        // d loss / d logit for BCE on a sigmoid output.
        const Eigen::RowVectorXd g4 = (logits.unaryExpr([](double z) { return sigmoid(z); }) - y).transpose() * inv;

        g.combiner_weights += experts * g4.transpose();
        g.combiner_bias += g4.sum();
        Eigen::MatrixXd g3 = model.combiner_weights * g4;
        g3.array() *= experts.array() * (1.0 - experts.array());
        g.expert_weights += g3 * hidden.transpose();
        g.expert_bias += g3.rowwise().sum();
        Eigen::MatrixXd g2 = model.expert_weights.transpose() * g3;
        g2.array() *= active.array();
        g.hidden_weights += g2 * corr.transpose();
        g.hidden_bias += g2.rowwise().sum();
        const Eigen::MatrixXd g1 = model.hidden_weights.transpose() * g2;
        g.kernels += g1 * x.transpose();
        g.kernel_bias += g1.rowwise().sum();
    }
    out.loss *= inv;
    return out;
}

double dataset_loss(const CenModel& model, const std::vector<Eigen::MatrixXd>& windows, const PatchDataset& data)
{
    double total = 0.0;
    Eigen::Index pixels = 0;
    for (std::size_t k = 0; k < data.size(); ++k) {
        const Eigen::VectorXd z = logits(windows[k], model);
        const Eigen::VectorXd y = flat_label(data.samples[k].label);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            total += softplus(z(i)) - y(i) * z(i);
        }
        pixels += z.size();
    }
    return pixels == 0 ? 0.0 : total / static_cast<double>(pixels);
}

DetectorScore score_predictions(std::span<const double> predicted, std::span<const double> truth)
{
    if (predicted.size() != truth.size() || predicted.empty()) {
        fail(ErrorKind::validation, "score: prediction and truth sizes differ or are empty");
    }
    const double n = static_cast<double>(predicted.size());
    double mp = 0.0;
    double mt = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        mp += predicted[i];
        mt += truth[i];
    }
    mp /= n;
    mt /= n;
    double spp = 0.0;
    double stt = 0.0;
    double spt = 0.0;
    double sse = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double dp = predicted[i] - mp;
        const double dt = truth[i] - mt;
        spp += dp * dp;
        stt += dt * dt;
        spt += dp * dt;
        sse += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
    }
    DetectorScore s;
    s.rmse = std::sqrt(sse / n);
    s.r2 = (spp > 0.0 && stt > 0.0) ? (spt * spt) / (spp * stt) : 0.0;
    return s;
}

DetectorScore evaluate_detector(const CenModel& model, const PatchDataset& test)
{
    if (test.empty()) {
        fail(ErrorKind::validation, "evaluate: empty test split");
    }
    return evaluate_windows(model, all_windows(test), test);
}

TrainResult train_cen(const PatchDataset& train, const PatchDataset& test, const TrainConfig& cfg,
                      const CenArch& arch)
{
    validate(cfg);
    if (train.empty()) {
        fail(ErrorKind::validation, "train: empty training split");
    }
    const auto train_windows = all_windows(train);
    const auto test_windows = all_windows(test);

    TrainResult result;
    result.model = init_cen(arch, cfg.seed);
    const auto [nonneg_at, nonneg_len] = combiner_range(result.model);

    auto record = [&](int epoch) {
        EpochRecord e;
        e.epoch = epoch;
        e.train_loss = dataset_loss(result.model, train_windows, train);
        if (!std::isfinite(e.train_loss)) {
            fail(ErrorKind::numerical, "train: loss became non-finite at epoch " + std::to_string(epoch));
        }
        if (test.empty()) {
            e.test_r2 = e.test_rmse = std::numeric_limits<double>::quiet_NaN();
        } else {
            const DetectorScore s = evaluate_windows(result.model, test_windows, test);
            e.test_r2 = s.r2;
            e.test_rmse = s.rmse;
        }
        result.curve.push_back(e);
    };
    record(0);

    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    Eigen::VectorXd theta = pack(result.model);
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
    long step = 0;

    std::mt19937_64 shuffle_rng(cfg.seed + 1);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            const LossGradient lg =
                loss_and_gradient(result.model, train_windows, train, std::span(order).subspan(start, len));
            if (!std::isfinite(lg.loss)) {
                fail(ErrorKind::numerical, "train: loss became non-finite at epoch " + std::to_string(epoch));
            }
            const Eigen::VectorXd grad = pack(lg.gradient);
            ++step;
            m1 = beta1 * m1 + (1.0 - beta1) * grad;
            m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
            if (cfg.enforce_nonneg) {
                theta.segment(nonneg_at, nonneg_len) = theta.segment(nonneg_at, nonneg_len).cwiseMax(0.0);
            }
            unpack(theta, result.model);
        }
        record(epoch);
    }
    return result;
}

void save_loss_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path)
{
    std::ostringstream out;
    out << "epoch,train_loss,test_r2,test_rmse\n";
    for (const auto& e : curve) {
        out << e.epoch << "," << io::format_double(e.train_loss) << "," << io::format_double(e.test_r2) << ","
            << io::format_double(e.test_rmse) << "\n";
    }
    io::write_text(path, out.str());
}

} // namespace clmfit
