#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace nudge {

template <std::floating_point Real>
using Point3 = std::array<Real, 3>;

/// Ordered set of 3D points with an optional class label.
template <std::floating_point Real = float>
struct PointCloud {
    std::vector<Point3<Real>> points;
    std::optional<int> label;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }

    /// Row-major view of the coordinates (3 values per point).
    std::span<const Real> flat() const noexcept {
        return {reinterpret_cast<const Real*>(points.data()), 3 * points.size()};
    }
    std::span<Real> flat() noexcept { return {reinterpret_cast<Real*>(points.data()), 3 * points.size()}; }

    friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

static_assert(sizeof(Point3<float>) == 3 * sizeof(float));
static_assert(sizeof(Point3<double>) == 3 * sizeof(double));

template <std::floating_point To, std::floating_point From>
PointCloud<To> cloud_cast(const PointCloud<From>& in) {
    PointCloud<To> out;
    out.label = in.label;
    out.points.reserve(in.size());
    for (const auto& p : in.points)
        out.points.push_back({static_cast<To>(p[0]), static_cast<To>(p[1]), static_cast<To>(p[2])});
    return out;
}

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Labelled clouds sharing one point count.
struct Dataset {
    std::vector<PointCloud<float>> clouds;
    std::vector<std::string> class_names;
    Split split = Split::train;

    std::size_t size() const noexcept { return clouds.size(); }
    std::size_t num_classes() const noexcept { return class_names.size(); }

    /// Throws InvalidInput unless every cloud is labelled, labels are in
    /// range and all clouds have the same size.
    void validate() const {
        for (std::size_t i = 0; i < clouds.size(); ++i) {
            const auto& c = clouds[i];
            detail::require(c.label.has_value(), "dataset cloud " + std::to_string(i) + " has no label");
            detail::require(*c.label >= 0 && static_cast<std::size_t>(*c.label) < class_names.size(),
                            "dataset cloud " + std::to_string(i) + " label out of range");
            detail::require(c.size() == clouds.front().size(), "dataset clouds differ in point count");
        }
    }
};

template <std::floating_point Real>
void require_finite(const PointCloud<Real>& cloud) {
    for (const auto& p : cloud.points)
        for (Real v : p)
            if (!std::isfinite(v)) throw InvalidInput("point cloud has a non-finite coordinate");
}

/// Centers the cloud on its centroid and scales it so the furthest point
/// lies on the unit sphere. A cloud whose points all coincide collapses to
/// the origin.
template <std::floating_point Real>
PointCloud<Real> normalize_unit_sphere(const PointCloud<Real>& cloud) {
    detail::require(!cloud.empty(), "normalize_unit_sphere: empty cloud");
    require_finite(cloud);

    std::array<double, 3> centroid{0, 0, 0};
    for (const auto& p : cloud.points)
        for (int d = 0; d < 3; ++d) centroid[d] += p[d];
    for (auto& c : centroid) c /= static_cast<double>(cloud.size());

    double max_r2 = 0;
    for (const auto& p : cloud.points) {
        double r2 = 0;
        for (int d = 0; d < 3; ++d) {
            double v = p[d] - centroid[d];
            r2 += v * v;
        }
        max_r2 = std::max(max_r2, r2);
    }
    const double scale = max_r2 > 0 ? 1.0 / std::sqrt(max_r2) : 0.0;

    PointCloud<Real> out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        Point3<Real> q;
        for (int d = 0; d < 3; ++d) q[d] = static_cast<Real>((p[d] - centroid[d]) * scale);
        out.points.push_back(q);
    }
    return out;
}

/// Draws exactly `n` points: a uniform subset without replacement when the
/// cloud has at least `n` points (kept in input order), otherwise every
/// point followed by draws with replacement.
template <std::floating_point Real>
PointCloud<Real> sample_fixed_size(const PointCloud<Real>& cloud, std::size_t n, std::uint64_t seed) {
    detail::require(n >= 1, "sample_fixed_size: n must be >= 1");
    detail::require(!cloud.empty(), "sample_fixed_size: empty cloud");

    Rng rng(seed);
    const std::size_t P = cloud.size();
    std::vector<std::size_t> chosen;
    if (P >= n) {
        std::vector<std::size_t> idx(P);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, P - i)]);
        chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(chosen.begin(), chosen.end());
    } else {
        chosen.resize(P);
        std::iota(chosen.begin(), chosen.end(), std::size_t{0});
        while (chosen.size() < n) chosen.push_back(uniform_index(rng, P));
    }

    PointCloud<Real> out;
    out.label = cloud.label;
    out.points.reserve(n);
    for (auto i : chosen) out.points.push_back(cloud.points[i]);
    return out;
}

/// Row-major P x k neighbor table.
struct KnnGraph {
    std::size_t k = 0;
    std::vector<std::uint32_t> indices;

    std::size_t rows() const noexcept { return k ? indices.size() / k : 0; }
    std::span<const std::uint32_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// k nearest rows (squared Euclidean distance, self excluded, ties to the
/// lower index) of an n x dim row-major feature matrix.
template <std::floating_point Real>
KnnGraph knn_rows(std::span<const Real> features, std::size_t dim, std::size_t k) {
    detail::require(dim > 0 && features.size() % dim == 0, "knn_rows: feature size not a multiple of dim");
    const std::size_t n = features.size() / dim;
    detail::require(k >= 1 && k < n, "knn: k must satisfy 1 <= k < P");

    KnnGraph g;
    g.k = k;
    g.indices.resize(n * k);
    std::vector<std::pair<Real, std::uint32_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* a = features.data() + i * dim;
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const Real* b = features.data() + j * dim;
            Real d2 = 0;
            for (std::size_t t = 0; t < dim; ++t) {
                Real v = a[t] - b[t];
                d2 += v * v;
            }
            cand[c++] = {d2, static_cast<std::uint32_t>(j)};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t t = 0; t < k; ++t) g.indices[i * k + t] = cand[t].second;
    }
    return g;
}

template <std::floating_point Real>
KnnGraph knn_indices(const PointCloud<Real>& cloud, std::size_t k) {
    detail::require(k >= 1 && k < cloud.size(), "knn_indices: k must satisfy 1 <= k < P");
    return knn_rows<Real>(cloud.flat(), 3, k);
}

struct PerturbationNorms {
    double l2 = 0;
    double linf = 0;
    std::size_t edited = 0;
};

/// Norms of (adversarial - original), accumulated in double.
template <std::floating_point Real>
PerturbationNorms perturbation_norms(const PointCloud<Real>& original, const PointCloud<Real>& adversarial) {
    detail::require(original.size() == adversarial.size(), "perturbation_norms: point count mismatch");
    PerturbationNorms n;
    double sum2 = 0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        bool changed = false;
        for (int d = 0; d < 3; ++d) {
            double diff = static_cast<double>(adversarial.points[i][d]) - static_cast<double>(original.points[i][d]);
            sum2 += diff * diff;
            n.linf = std::max(n.linf, std::abs(diff));
            changed |= diff != 0;
        }
        n.edited += changed;
    }
    n.l2 = std::sqrt(sum2);
    return n;
}

} // namespace nudge
