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
#include "clmfit/nurlms.hpp"
#include "clmfit/rotation.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

namespace clmfit {

namespace {

constexpr double kMinLogProbability = -27.631021115928547;  // log(1e-12)

double bilinear(const ResponseMap& map, const Vec2& at)
{
    const Vec2 g = (at - map.origin) / map.step;
    const double x = std::clamp(g.x(), 0.0, static_cast<double>(map.cols() - 1));
    const double y = std::clamp(g.y(), 0.0, static_cast<double>(map.rows() - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, map.cols() - 1);
    const int y1 = std::min(y0 + 1, map.rows() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    return (1 - fy) * ((1 - fx) * map.values(y0, x0) + fx * map.values(y0, x1))
        + fy * ((1 - fx) * map.values(y1, x0) + fx * map.values(y1, x1));
}

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn)
{
    threads = std::clamp(threads, 1, std::max(count, 1));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (int i = t; i < count; i += threads) {
                        fn(i);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace

// Image -> working frame: scales the face to the detector's inter-ocular
// distance and undoes the in-plane rotation.
Mat2 working_frame(const PdmParams& params, int scale_px, double ref_length)
{
    const double a = scale_px / (ref_length * params.scale);
    const double theta = in_plane_angle(rotation_from_axis_angle(params.rotation));
    Mat2 rot;
    rot << std::cos(theta), std::sin(theta),
           -std::sin(theta), std::cos(theta);
    return a * rot;
}

void validate(const NurlmsConfig& cfg)
{
    if (!(cfg.rho > 0.0)) {
        fail(ErrorKind::validation, "config: rho must be positive");
    }
    if (!(cfg.reg >= 0.0)) {
        fail(ErrorKind::validation, "config: r must be non-negative");
    }
    if (!(cfg.weight > 0.0)) {
        fail(ErrorKind::validation, "config: w must be positive");
    }
    if (cfg.max_iters < 1) {
        fail(ErrorKind::validation, "config: max_iters must be at least 1");
    }
    if (!(cfg.convergence_tol >= 0.0)) {
        fail(ErrorKind::validation, "config: convergence_tol must be non-negative");
    }
    if (cfg.roi_schedule.empty()) {
        fail(ErrorKind::validation, "config: roi_schedule is empty");
    }
    for (int roi : cfg.roi_schedule) {
        if (roi < kKernelSize) {
            fail(ErrorKind::validation, "config: ROI sizes must be at least 11");
        }
    }
    if (cfg.threads < 1) {
        fail(ErrorKind::validation, "config: threads must be at least 1");
    }
}

LandmarkReliability LandmarkReliability::uniform(int n_landmarks, double value)
{
    return {Eigen::VectorXd::Constant(n_landmarks, value)};
}

void validate(const LandmarkReliability& reliability, int n_landmarks)
{
    if (reliability.c.size() != n_landmarks) {
        fail(ErrorKind::validation, "reliability has " + std::to_string(reliability.c.size())
                                        + " entries, expected " + std::to_string(n_landmarks));
    }
    for (Eigen::Index i = 0; i < reliability.c.size(); ++i) {
        if (!(reliability.c(i) > 0.0) || !std::isfinite(reliability.c(i))) {
            fail(ErrorKind::validation, "reliability[" + std::to_string(i) + "] must be positive");
        }
    }
}

std::optional<Vec2> mean_shift(const ResponseMap& map, const Vec2& current, double rho)
{
    if (!(rho > 0.0)) {
        fail(ErrorKind::validation, "mean shift: rho must be positive");
    }
    // Exponents are offset by the nearest candidate's; the factor cancels in the ratio.
    double nearest = std::numeric_limits<double>::infinity();
    for (int r = 0; r < map.rows(); ++r) {
        for (int c = 0; c < map.cols(); ++c) {
            if (map.values(r, c) > 0.0) {
                nearest = std::min(nearest, (map.cell_center(r, c) - current).squaredNorm());
            }
        }
    }
    if (!std::isfinite(nearest)) {
        return std::nullopt;
    }
    double mass = 0.0;
    Vec2 weighted = Vec2::Zero();
    for (int r = 0; r < map.rows(); ++r) {
        for (int c = 0; c < map.cols(); ++c) {
            const Vec2 y = map.cell_center(r, c);
            const double k = std::exp(-((y - current).squaredNorm() - nearest) / (2.0 * rho));
            const double wgt = map.values(r, c) * k;
            mass += wgt;
            weighted += wgt * y;
        }
    }
    if (!(mass > 0.0) || !std::isfinite(mass)) {
        return std::nullopt;
    }
    return Vec2(weighted / mass - current);
}

Eigen::VectorXd solve_update(const Eigen::MatrixXd& jac, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& prior_precision,
                             const Eigen::VectorXd& params, double reg)
{
    const Eigen::Index k = jac.cols();
    if (v.size() != jac.rows() || weights.size() != jac.rows() || prior_precision.size() != k
        || params.size() != k) {
        fail(ErrorKind::validation, "update: inconsistent system dimensions");
    }
    const Eigen::MatrixXd jtw = jac.transpose() * weights.asDiagonal();
    Eigen::MatrixXd normal = jtw * jac;
    normal.diagonal() += reg * prior_precision;
    const Eigen::VectorXd rhs = jtw * v - reg * prior_precision.cwiseProduct(params);

    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (normal(i, i) > 0.0) {
            active.push_back(i);
        }
    }
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(k);
    if (active.empty()) {
        return delta;
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd sub(na, na);
    Eigen::VectorXd sub_rhs(na);
    for (Eigen::Index a = 0; a < na; ++a) {
        sub_rhs(a) = rhs(active[a]);
        for (Eigen::Index b = 0; b < na; ++b) {
            sub(a, b) = normal(active[a], active[b]);
        }
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14)) {
        fail(ErrorKind::numerical, "update: singular normal system");
    }
    const Eigen::VectorXd x = llt.solve(sub_rhs);
    for (Eigen::Index a = 0; a < na; ++a) {
        delta(active[a]) = x(a);
    }
    if (!delta.allFinite()) {
        fail(ErrorKind::numerical, "update: non-finite parameter update");
    }
    return delta;
}

Eigen::VectorXd landmark_weights(const LandmarkReliability& reliability, const std::vector<bool>& visible,
                                 double weight)
{
    const auto n = reliability.c.size();
    if (static_cast<Eigen::Index>(visible.size()) != n) {
        fail(ErrorKind::validation, "visibility and reliability lengths differ");
    }
    Eigen::VectorXd w(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = visible[i] ? weight * reliability.c(i) : 0.0;
        w(i) = wi;
        w(n + i) = wi;
    }
    return w;
}

Eigen::VectorXd prior_precision(const PdmModel& model)
{
    Eigen::VectorXd prec = Eigen::VectorXd::Zero(model.n_params());
    prec.tail(model.n_modes()) = model.eigenvalues.cwiseInverse();
    return prec;
}

Eigen::VectorXd update_step(const PdmModel& model, const PdmParams& params, const Eigen::VectorXd& v,
                            const LandmarkReliability& reliability, const std::vector<bool>& visible,
                            const NurlmsConfig& cfg)
{
    const int n = model.n_landmarks();
    if (v.size() != 2 * n) {
        fail(ErrorKind::validation, "update: mean-shift vector must have 2n entries");
    }
    validate(reliability, n);
    return solve_update(jacobian(model, params), v, landmark_weights(reliability, visible, cfg.weight),
                        prior_precision(model), params.to_vector(), cfg.reg);
}

Eigen::MatrixXd extract_roi(const Image& image, const RoiRequest& request)
{
    const int n = request.roi_size;
    if (n < kKernelSize) {
        fail(ErrorKind::validation, "ROI smaller than the detector kernel");
    }
    const Mat2 to_image = request.to_ref.inverse();
    const double half = 0.5 * (n - 1);
    Eigen::MatrixXd roi(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const Vec2 ref = request.center_ref + Vec2(c - half, r - half);
            const Vec2 img = to_image * ref;
            roi(r, c) = image.sample(img.x(), img.y());
        }
    }
    return roi;
}

std::vector<double> CenBankSource::view_yaws() const
{
    std::vector<double> out;
    for (double deg : bank_.views_deg()) {
        out.push_back(deg2rad(deg));
    }
    return out;
}

ResponseMap CenBankSource::respond(const RoiRequest& request) const
{
    const auto model = bank_.find(request.landmark, request.view, request.scale_px);
    if (!model) {
        fail(ErrorKind::config, "no detector for landmark " + std::to_string(request.landmark) + ", view "
                                    + std::to_string(request.view) + ", scale "
                                    + std::to_string(request.scale_px));
    }
    return response_map(extract_roi(image_, request), *model, request.map_origin(), 1.0);
}

int select_view(std::span<const double> view_yaws, const Vec3& rotation)
{
    if (view_yaws.empty()) {
        fail(ErrorKind::config, "no views available");
    }
    const double yaw = yaw_of(rotation);
    int best = 0;
    for (int v = 1; v < static_cast<int>(view_yaws.size()); ++v) {
        const double d = std::abs(view_yaws[v] - yaw);
        const double db = std::abs(view_yaws[best] - yaw);
        if (d < db - 1e-12 || (std::abs(d - db) <= 1e-12 && std::abs(view_yaws[v]) < std::abs(view_yaws[best]))) {
            best = v;
        }
    }
    return best;
}

int stage_scale(std::span<const int> scales, int stage)
{
    if (scales.empty()) {
        fail(ErrorKind::config, "no detector scales available");
    }
    return scales[std::min<std::size_t>(stage, scales.size() - 1)];
}

void check_bank_for_fit(const CenBank& bank, int n_landmarks, const NurlmsConfig& cfg)
{
    std::vector<int> needed;
    for (std::size_t s = 0; s < cfg.roi_schedule.size(); ++s) {
        needed.push_back(stage_scale(bank.scales(), static_cast<int>(s)));
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    bank.check_complete(n_landmarks, needed);
}

int FitResult::total_iterations() const
{
    int total = 0;
    for (int it : stage_iterations) {
        total += it;
    }
    return total;
}

FitResult fit(const PdmModel& model, const ResponseSource& source, const PdmParams& init,
              const NurlmsConfig& cfg, const LandmarkReliability& reliability, const FitOptions& options)
{
    validate(cfg);
    const int n = model.n_landmarks();
    validate(reliability, n);
    if (init.nonrigid.size() != model.n_modes() || !(init.scale > 0.0)) {
        fail(ErrorKind::validation, "fit: initial parameters do not match the model");
    }
    const std::vector<int> scales = source.scales();
    const std::vector<double> views = source.view_yaws();
    const double ref_length = reference_length(model);
    const Eigen::VectorXd prior = prior_precision(model);
    const int stages = static_cast<int>(cfg.roi_schedule.size());

    FitResult result;
    PdmParams params = init;
    std::vector<bool> visible(n, true);

    for (int stage = 0; stage < stages; ++stage) {
        const int roi_size = cfg.roi_schedule[stage];
        const int scale_px = stage_scale(scales, stage);
        const int view = select_view(views, params.rotation);
        for (int i = 0; i < n; ++i) {
            visible[i] = source.visible(i, view);
        }
        const Eigen::VectorXd weights = landmark_weights(reliability, visible, cfg.weight);

        std::vector<std::optional<ResponseMap>> maps(n);
        Mat2 to_ref = Mat2::Identity();
        int iterations = 0;
        for (int it = 0; it < cfg.max_iters; ++it) {
            to_ref = working_frame(params, scale_px, ref_length);
            const LandmarkSet shape = shape_from_params(model, params);

            parallel_for(n, cfg.threads, [&](int i) {
                if (!visible[i]) {
                    maps[i].reset();
                    return;
                }
                RoiRequest req;
                req.landmark = i;
                req.view = view;
                req.scale_px = scale_px;
                req.roi_size = roi_size;
                req.to_ref = to_ref;
                req.center_ref = to_ref * shape.points[i];
                maps[i] = source.respond(req);
            });

            // Mean shifts are taken in the working frame; the least-squares
            // system is expressed there as well (J and v both scaled by a).
            const double a = std::sqrt(std::abs(to_ref.determinant()));
            const Mat2 to_image = to_ref.inverse();
            Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * n);
            for (int i = 0; i < n; ++i) {
                if (!maps[i]) {
                    continue;
                }
                const auto shift = mean_shift(*maps[i], to_ref * shape.points[i], cfg.rho);
                if (shift) {
                    const Vec2 img = to_image * *shift;
                    v(i) = a * img.x();
                    v(n + i) = a * img.y();
                }
            }
            const Eigen::MatrixXd jac = a * jacobian(model, params);
            const Eigen::VectorXd delta = solve_update(jac, v, weights, prior, params.to_vector(), cfg.reg);
            params = apply_update(params, delta);
            if (!(params.scale > 0.0) || !params.to_vector().allFinite()) {
                fail(ErrorKind::numerical, "fit: parameters diverged");
            }
            ++iterations;
            if (options.observer) {
                options.observer(params, stage, it);
            }
            if (delta.norm() < cfg.convergence_tol) {
                break;
            }
        }
        result.stage_iterations.push_back(iterations);
        result.stage_roi_sizes.push_back(roi_size);

        // Penalized log-probability at the updated positions, read from the
        // last response maps of this stage.
        const LandmarkSet shape = shape_from_params(model, params);
        double log_prob = 0.0;
        for (int i = 0; i < n; ++i) {
            if (maps[i]) {
                const double p = bilinear(*maps[i], to_ref * shape.points[i]);
                log_prob += p > 0.0 ? std::max(std::log(p), kMinLogProbability) : kMinLogProbability;
            }
        }
        result.map_score = log_prob - cfg.reg * regularization(model, params);

        if (options.allow_discard && stage + 1 < stages && result.map_score < cfg.reject_threshold) {
            result.discarded = true;
            break;
        }
    }

    result.params = params;
    result.landmarks = shape_from_params(model, params);
    result.landmarks.visible = visible;
    return result;
}

std::vector<Vec3> hypothesis_orientations(bool extended)
{
    const double d30 = deg2rad(30.0);
    std::vector<EulerAngles> eulers{
        {0.0, 0.0, 0.0},
        {0.0, d30, 0.0},
        {0.0, -d30, 0.0},
        {d30, 0.0, 0.0},
        {-d30, 0.0, 0.0},
        {0.0, 0.0, d30},
        {0.0, 0.0, -d30},
    };
    if (extended) {
        for (double deg : {55.0, -55.0, 90.0, -90.0}) {
            eulers.push_back({0.0, deg2rad(deg), 0.0});
        }
    }
    std::vector<Vec3> out;
    for (const auto& e : eulers) {
        out.push_back(axis_angle_from_euler(e));
    }
    return out;
}

FitResult multi_hypothesis_fit(const PdmModel& model, const ResponseSource& source, const BoundingBox& bbox,
                               const NurlmsConfig& cfg, const LandmarkReliability& reliability,
                               bool exhaustive)
{
    const std::vector<Vec3> orientations = hypothesis_orientations(cfg.extended_views);
    FitOptions options;
    options.allow_discard = !exhaustive;

    std::optional<FitResult> best;
    int evaluated = 0;
    for (int h = 0; h < static_cast<int>(orientations.size()); ++h) {
        const PdmParams init = init_from_bbox(model, bbox, orientations[h]);
        FitResult r = fit(model, source, init, cfg, reliability, options);
        r.hypothesis = h;
        ++evaluated;
        const bool better = !best || (best->discarded && !r.discarded)
            || (best->discarded == r.discarded && r.map_score > best->map_score);
        if (better) {
            best = std::move(r);
        }
        if (!exhaustive && !best->discarded && best->map_score > cfg.accept_threshold) {
            break;
        }
    }
    best->hypotheses_evaluated = evaluated;
    best->low_confidence = best->discarded || best->map_score < cfg.reject_threshold;
    return *best;
}

} // namespace clmfit
