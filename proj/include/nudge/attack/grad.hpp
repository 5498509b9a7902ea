#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../nn/classifier.hpp"
#include "../pointcloud.hpp"
#include "result.hpp"

namespace nudge {

/// A model the white-box attack can differentiate. `session()` returns a
/// stateful evaluator exposing `loss_gradient(cloud, label)` and
/// `predict(cloud)`.
template <class M, class Real>
concept GradientModel = requires(const M& m, const PointCloud<Real>& x, int y) {
    { m.session() };
    { m.session().loss_gradient(x, y) } -> std::convertible_to<nn::LossGradient<Real>>;
    { m.session().predict(x) } -> std::convertible_to<int>;
};

struct GradAttackConfig {
    double epsilon = 0.05;       // per-iteration step
    std::size_t iterations = 10; // used by both phases
    std::size_t budget = 1;      // points that may move
    AttackMode mode = AttackMode::untargeted;
    std::optional<int> target_class;

    static GradAttackConfig weak(std::size_t budget) { return {0.05, 10, budget}; }
    static GradAttackConfig moderate(std::size_t budget) { return {0.2, 50, budget}; }
    static GradAttackConfig strong(std::size_t budget) { return {0.5, 200, budget}; }

    void validate(std::size_t points, std::optional<int> true_label = std::nullopt) const {
        detail::require(epsilon > 0 && std::isfinite(epsilon), "epsilon must be > 0");
        detail::require(iterations >= 1, "iterations must be >= 1");
        detail::require(budget >= 1 && budget <= points, "budget must be in [1, P]");
        if (mode == AttackMode::targeted) {
            detail::require(target_class.has_value(), "targeted attack needs a target class");
            detail::require(!true_label || *target_class != *true_label, "target class equals the true label");
        }
    }
};

/// Points chosen for editing, with the per-point displacement scores that
/// ranked them and the threshold (score of the weakest selected point).
struct SelectionMask {
    std::vector<bool> selected;
    std::vector<double> scores;
    double threshold = 0;

    std::size_t count() const { return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true)); }
};

namespace detail {

/// Keeps the `budget` highest scores; equal scores prefer the lower index.
inline SelectionMask select_top_points(std::vector<double> scores, std::size_t budget) {
    const std::size_t P = scores.size();
    std::vector<std::size_t> order(P);
    for (std::size_t i = 0; i < P; ++i) order[i] = i;
    const std::size_t keep = std::min(budget, P);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
    SelectionMask m;
    m.selected.assign(P, false);
    for (std::size_t i = 0; i < keep; ++i) m.selected[order[i]] = true;
    m.threshold = keep ? scores[order[keep - 1]] : 0.0;
    m.scores = std::move(scores);
    return m;
}

template <std::floating_point Real>
void require_finite_gradient(const std::vector<Point3<Real>>& g, std::size_t iteration, const char* phase) {
    for (const auto& p : g)
        for (Real v : p)
            if (!std::isfinite(v))
                throw NumericError(std::string(phase) + ": non-finite gradient at iteration " + std::to_string(iteration));
}

/// x + steps * epsilon in the cloud's precision, rounded toward x when the
/// rounding would push the offset past |steps| * epsilon.
template <std::floating_point Real>
Real offset_coordinate(Real x, int steps, double epsilon) {
    if (steps == 0) return x;
    const double limit = std::abs(steps) * epsilon;
    Real v = static_cast<Real>(static_cast<double>(x) + steps * epsilon);
    while (std::abs(static_cast<double>(v) - static_cast<double>(x)) > limit) v = std::nextafter(v, x);
    return v;
}

} // namespace detail

/// Phase one of the gradient nudge: accumulates raw loss gradients into a
/// copy of the cloud (added when untargeted, subtracted for the target class
/// when targeted) and returns, for each requested iteration count in
/// `checkpoints` (ascending), the mask of the `budget` points that moved the
/// furthest (row L2 of the displacement).
template <std::floating_point Real, class Model>
    requires GradientModel<Model, Real>
std::vector<SelectionMask> locate_vulnerable_points_at(const Model& model, const PointCloud<Real>& x, int label,
                                                       AttackMode mode, std::span<const std::size_t> checkpoints,
                                                       std::size_t budget) {
    detail::require(!checkpoints.empty() && std::is_sorted(checkpoints.begin(), checkpoints.end()) &&
                        checkpoints.front() >= 1,
                    "iteration checkpoints must be ascending and >= 1");
    detail::require(budget >= 1, "budget must be >= 1");
    const Real sign = mode == AttackMode::untargeted ? Real(1) : Real(-1);
    auto session = model.session();
    PointCloud<Real> moved = x;
    std::vector<SelectionMask> masks;
    std::size_t next = 0;
    for (std::size_t it = 1; next < checkpoints.size(); ++it) {
        const auto lg = session.loss_gradient(moved, label);
        detail::require_finite_gradient(lg.gradient, it, "locate_vulnerable_points");
        for (std::size_t p = 0; p < moved.size(); ++p)
            for (int d = 0; d < 3; ++d) moved.points[p][d] += sign * lg.gradient[p][d];
        for (const auto& p : moved.points)
            for (Real v : p)
                if (!std::isfinite(v))
                    throw NumericError("locate_vulnerable_points: accumulated cloud is non-finite at iteration " +
                                       std::to_string(it));
        while (next < checkpoints.size() && checkpoints[next] == it) {
            std::vector<double> scores(x.size());
            for (std::size_t p = 0; p < x.size(); ++p) {
                double s = 0;
                for (int d = 0; d < 3; ++d) {
                    const double diff = std::abs(static_cast<double>(moved.points[p][d]) - x.points[p][d]);
                    s += diff * diff;
                }
                scores[p] = std::sqrt(s);
            }
            masks.push_back(detail::select_top_points(std::move(scores), budget));
            ++next;
        }
    }
    return masks;
}

template <std::floating_point Real, class Model>
    requires GradientModel<Model, Real>
SelectionMask locate_vulnerable_points(const Model& model, const PointCloud<Real>& x, int label, AttackMode mode,
                                       std::size_t iterations, std::size_t budget) {
    const std::size_t cp[] = {iterations};
    return std::move(locate_vulnerable_points_at<Real>(model, x, label, mode, cp, budget).front());
}

/// Phase two: signed-gradient steps of size epsilon restricted to the masked
/// points (ascent on the label when untargeted, descent on the target class
/// when targeted). Returns the cloud after each iteration count in
/// `checkpoints` (ascending). sign(0) = 0. Unmasked rows are never touched.
template <std::floating_point Real, class Model>
    requires GradientModel<Model, Real>
std::vector<PointCloud<Real>> masked_sign_descent_at(const Model& model, const PointCloud<Real>& x, int label,
                                                     AttackMode mode, const std::vector<bool>& mask, double epsilon,
                                                     std::span<const std::size_t> checkpoints) {
    detail::require(epsilon > 0 && std::isfinite(epsilon), "epsilon must be > 0");
    detail::require(mask.size() == x.size(), "mask size differs from point count");
    detail::require(!checkpoints.empty() && std::is_sorted(checkpoints.begin(), checkpoints.end()) &&
                        checkpoints.front() >= 1,
                    "iteration checkpoints must be ascending and >= 1");
    const int sign = mode == AttackMode::untargeted ? 1 : -1;
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p]) rows.push_back(p);

    // Steps are tracked as integer multiples of epsilon per coordinate.
    std::vector<std::array<int, 3>> steps(rows.size(), {0, 0, 0});
    auto session = model.session();
    PointCloud<Real> current = x;
    std::vector<PointCloud<Real>> out;
    std::size_t next = 0;
    for (std::size_t it = 1; next < checkpoints.size(); ++it) {
        if (rows.empty()) {
            while (next < checkpoints.size()) out.push_back(current), ++next;
            break;
        }
        const auto lg = session.loss_gradient(current, label);
        detail::require_finite_gradient(lg.gradient, it, "masked_sign_descent");
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t p = rows[r];
            for (int d = 0; d < 3; ++d) {
                const Real g = lg.gradient[p][d];
                if (g == Real(0)) continue;
                steps[r][d] += g > Real(0) ? sign : -sign;
                current.points[p][d] = detail::offset_coordinate(x.points[p][d], steps[r][d], epsilon);
            }
        }
        while (next < checkpoints.size() && checkpoints[next] == it) out.push_back(current), ++next;
    }
    return out;
}

template <std::floating_point Real, class Model>
    requires GradientModel<Model, Real>
PointCloud<Real> masked_sign_descent(const Model& model, const PointCloud<Real>& x, int label, AttackMode mode,
                                     const std::vector<bool>& mask, double epsilon, std::size_t iterations) {
    const std::size_t cp[] = {iterations};
    return std::move(masked_sign_descent_at<Real>(model, x, label, mode, mask, epsilon, cp).front());
}

/// Gradient-based nudge attack: find the `budget` most sensitive points,
/// then push only those with signed gradient steps. Both phases run
/// `config.iterations` iterations. The result is not clipped or
/// re-normalized.
template <std::floating_point Real, class Model>
    requires GradientModel<Model, Real>
AttackResult nudge_grad(const Model& model, const PointCloud<Real>& x, int y, const GradAttackConfig& config) {
    config.validate(x.size(), y);
    const int label = config.mode == AttackMode::untargeted ? y : *config.target_class;
    AttackResult r;
    r.true_label = y;
    r.target_class = config.target_class;
    auto session = model.session();
    r.pred_before = session.predict(x);
    const auto mask = locate_vulnerable_points<Real>(model, x, label, config.mode, config.iterations, config.budget);
    const auto adv = masked_sign_descent<Real>(model, x, label, config.mode, mask.selected, config.epsilon,
                                               config.iterations);
    r.pred_after = session.predict(adv);
    r.success = attack_succeeded(config.mode, r.pred_before, r.pred_after, config.target_class);
    fill_norms(r, x, adv);
    r.adversarial = cloud_cast<float>(adv);
    r.adversarial.label = x.label;
    return r;
}

} // namespace nudge
