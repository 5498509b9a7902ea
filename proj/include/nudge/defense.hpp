#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "attack/result.hpp"
#include "error.hpp"
#include "nn/classifier.hpp"
#include "pointcloud.hpp"
#include "random.hpp"

namespace nudge {

/// Random-noise baseline: Gaussian offsets on `budget` distinct random points,
/// scaled so the whole perturbation has L2 norm `target_l2`.
template <std::floating_point Real>
AttackResult random_noise_attack(const nn::Classifier<Real>& model, const PointCloud<Real>& x, int y,
                                 std::size_t budget, double target_l2, std::uint64_t seed) {
    detail::require(budget >= 1 && budget <= x.size(), "noise budget must be in [1, P]");
    detail::require(target_l2 >= 0 && std::isfinite(target_l2), "target L2 must be >= 0");

    Rng rng(seed);
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < budget; ++i) std::swap(idx[i], idx[i + uniform_index(rng, x.size() - i)]);
    idx.resize(budget);

    std::vector<std::array<double, 3>> noise(budget);
    double norm = 0;
    while (norm == 0) {
        norm = 0;
        for (auto& n : noise)
            for (auto& v : n) {
                v = gaussian(rng);
                norm += v * v;
            }
        norm = std::sqrt(norm);
    }

    PointCloud<Real> adv = x;
    if (target_l2 > 0) {
        const double scale = target_l2 / norm;
        for (std::size_t i = 0; i < budget; ++i)
            for (int d = 0; d < 3; ++d)
                adv.points[idx[i]][d] = static_cast<Real>(static_cast<double>(x.points[idx[i]][d]) + noise[i][d] * scale);
    }

    AttackResult r;
    r.true_label = y;
    auto session = model.session();
    r.pred_before = session.predict(x);
    r.pred_after = session.predict(adv);
    r.success = attack_succeeded(AttackMode::untargeted, r.pred_before, r.pred_after, std::nullopt);
    fill_norms(r, x, adv);
    r.adversarial = cloud_cast<float>(adv);
    r.adversarial.label = x.label;
    return r;
}

/// Blind point-removal defense: normalize to the unit sphere, then drop the
/// `remove_k` points furthest from the origin (equal radii drop the lower
/// index first). Survivors keep their order.
template <std::floating_point Real>
PointCloud<Real> point_removal_defense(const PointCloud<Real>& x, std::size_t remove_k) {
    detail::require(remove_k < x.size(), "remove_k must be smaller than the point count");
    auto norm = normalize_unit_sphere(x);
    if (remove_k == 0) return norm;

    std::vector<double> radius(norm.size());
    for (std::size_t i = 0; i < norm.size(); ++i) {
        double r2 = 0;
        for (Real v : norm.points[i]) r2 += static_cast<double>(v) * v;
        radius[i] = r2;
    }
    std::vector<std::size_t> order(norm.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(remove_k), order.end(),
                      [&](std::size_t a, std::size_t b) { return radius[a] > radius[b] || (radius[a] == radius[b] && a < b); });
    std::vector<bool> drop(norm.size(), false);
    for (std::size_t i = 0; i < remove_k; ++i) drop[order[i]] = true;

    PointCloud<Real> out;
    out.label = x.label;
    out.points.reserve(x.size() - remove_k);
    for (std::size_t i = 0; i < norm.size(); ++i)
        if (!drop[i]) out.points.push_back(norm.points[i]);
    return out;
}

template <std::floating_point Real>
std::vector<Real> defended_predict(const nn::Classifier<Real>& model, const PointCloud<Real>& x, std::size_t remove_k) {
    return model.probabilities(point_removal_defense(x, remove_k));
}

} // namespace nudge
