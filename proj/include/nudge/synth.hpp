#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "error.hpp"
#include "pointcloud.hpp"
#include "random.hpp"

namespace nudge {

/// Primitive shapes of the synthetic classification set, by label.
enum class Primitive : int { sphere = 0, cube = 1, cylinder = 2, cone = 3, torus = 4 };

inline constexpr std::size_t kSynthClasses = 5;

inline std::vector<std::string> synth_class_names() { return {"sphere", "cube", "cylinder", "cone", "torus"}; }

namespace detail {

inline constexpr double kTorusMajor = 1.0;
inline constexpr double kTorusMinor = 0.35;

/// One uniform surface sample of the primitive before noise and normalization.
/// Sphere and cylinder have radius 1, cube half-extent 1, cylinder and cone
/// height 2 (z in [-1, 1]).
inline Point3<double> sample_primitive(Primitive shape, Rng& rng) {
    constexpr double pi = std::numbers::pi;
    switch (shape) {
    case Primitive::sphere: {
        for (;;) {
            double x = gaussian(rng), y = gaussian(rng), z = gaussian(rng);
            double r = std::sqrt(x * x + y * y + z * z);
            if (r > 1e-12) return {x / r, y / r, z / r};
        }
    }
    case Primitive::cube: {
        const auto face = uniform_index(rng, 6);
        const double a = uniform(rng, -1, 1), b = uniform(rng, -1, 1);
        const double s = face % 2 ? 1.0 : -1.0;
        switch (face / 2) {
        case 0: return {s, a, b};
        case 1: return {a, s, b};
        default: return {a, b, s};
        }
    }
    case Primitive::cylinder: {
        // lateral area 4*pi, each cap pi
        const double pick = uniform01(rng) * 6 * pi;
        const double theta = uniform(rng, 0, 2 * pi);
        if (pick < 4 * pi) return {std::cos(theta), std::sin(theta), uniform(rng, -1, 1)};
        const double r = std::sqrt(uniform01(rng));
        return {r * std::cos(theta), r * std::sin(theta), pick < 5 * pi ? 1.0 : -1.0};
    }
    case Primitive::cone: {
        // apex at z = 1, base radius 1 at z = -1; lateral area pi*sqrt(5), base pi
        const double lateral = pi * std::sqrt(5.0);
        const double pick = uniform01(rng) * (lateral + pi);
        const double theta = uniform(rng, 0, 2 * pi);
        const double r = std::sqrt(uniform01(rng));
        if (pick < lateral) return {r * std::cos(theta), r * std::sin(theta), 1 - 2 * r};
        return {r * std::cos(theta), r * std::sin(theta), -1.0};
    }
    case Primitive::torus: {
        // tube angle accepted with probability proportional to the local area element
        double phi;
        for (;;) {
            phi = uniform(rng, 0, 2 * pi);
            const double w = (kTorusMajor + kTorusMinor * std::cos(phi)) / (kTorusMajor + kTorusMinor);
            if (uniform01(rng) < w) break;
        }
        const double theta = uniform(rng, 0, 2 * pi);
        const double ring = kTorusMajor + kTorusMinor * std::cos(phi);
        return {ring * std::cos(theta), ring * std::sin(theta), kTorusMinor * std::sin(phi)};
    }
    }
    throw InvalidInput("unknown primitive");
}

} // namespace detail

/// Raw primitive samples with Gaussian jitter, before normalization.
inline PointCloud<float> synth_shape_raw(int class_id, std::size_t n, std::uint64_t seed, double jitter) {
    detail::require(class_id >= 0 && static_cast<std::size_t>(class_id) < kSynthClasses,
                    "synth_shape: unknown class id " + std::to_string(class_id));
    detail::require(n >= 1, "synth_shape: n must be >= 1");
    detail::require(jitter >= 0 && std::isfinite(jitter), "synth_shape: jitter must be >= 0");

    Rng rng(seed);
    PointCloud<float> cloud;
    cloud.label = class_id;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto p = detail::sample_primitive(static_cast<Primitive>(class_id), rng);
        if (jitter > 0)
            for (auto& v : p) v += gaussian(rng, jitter);
        cloud.points.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])});
    }
    return cloud;
}

/// Labelled, unit-sphere-normalized surface samples of a primitive.
inline PointCloud<float> synth_shape(int class_id, std::size_t n, std::uint64_t seed, double jitter) {
    return normalize_unit_sphere(synth_shape_raw(class_id, n, seed, jitter));
}

/// Balanced synthetic dataset: `per_class` clouds of every primitive,
/// interleaved by class. Each cloud gets its own derived seed.
inline Dataset synth_dataset(std::size_t per_class, std::size_t points, double jitter, std::uint64_t seed,
                             Split split, std::size_t classes = kSynthClasses) {
    detail::require(classes >= 1 && classes <= kSynthClasses, "synthetic class count must be in [1, 5]");
    Dataset ds;
    ds.class_names = synth_class_names();
    ds.class_names.resize(classes);
    ds.split = split;
    ds.clouds.reserve(per_class * classes);
    const std::uint64_t split_tag = split == Split::train ? 0 : 1;
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::size_t c = 0; c < classes; ++c)
            ds.clouds.push_back(synth_shape(static_cast<int>(c), points, derive_seed(seed, {split_tag, c, i}), jitter));
    return ds;
}

} // namespace nudge
