#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../random.hpp"
#include "../serialize.hpp"

namespace nudge::nn {

enum class Arch { pointnet, dgcnn };

inline std::string to_string(Arch a) { return a == Arch::pointnet ? "mini-pointnet" : "mini-dgcnn"; }

inline std::optional<Arch> parse_arch(std::string_view tag) {
    if (tag == "mini-pointnet" || tag == "pointnet") return Arch::pointnet;
    if (tag == "mini-dgcnn" || tag == "dgcnn") return Arch::dgcnn;
    return std::nullopt;
}

/// Architecture descriptor. `point_widths` are the per-point layer widths:
/// the shared MLP for mini-PointNet, the two edge-convolution blocks for
/// mini-DGCNN. Both end in a global max-pool and a two-layer head.
struct ArchSpec {
    Arch arch = Arch::pointnet;
    std::size_t classes = 0;
    std::vector<std::size_t> point_widths;
    std::size_t head_width = 64;
    std::size_t k = 0; // neighbors, mini-DGCNN only

    static ArchSpec mini_pointnet(std::size_t classes) { return {Arch::pointnet, classes, {64, 64, 128}, 64, 0}; }
    static ArchSpec mini_dgcnn(std::size_t classes, std::size_t k = 8) {
        return {Arch::dgcnn, classes, {64, 128}, 64, k};
    }

    /// Input width of per-point layer `l`.
    std::size_t layer_input(std::size_t l) const {
        const std::size_t prev = l == 0 ? 3 : point_widths[l - 1];
        return arch == Arch::dgcnn ? 2 * prev : prev;
    }

    /// (name, out, in) of every dense layer in canonical order.
    struct Layer {
        std::string name;
        std::size_t out, in;
    };
    std::vector<Layer> layers() const {
        std::vector<Layer> out;
        const char* prefix = arch == Arch::pointnet ? "mlp" : "edge";
        for (std::size_t l = 0; l < point_widths.size(); ++l)
            out.push_back({prefix + std::to_string(l + 1), point_widths[l], layer_input(l)});
        out.push_back({"fc1", head_width, point_widths.back()});
        out.push_back({"fc2", classes, head_width});
        return out;
    }

    void validate() const {
        if (classes < 1) throw ModelError("architecture needs at least one class");
        if (point_widths.empty() || head_width < 1) throw ModelError("architecture has an empty layer");
        for (auto w : point_widths)
            if (w < 1) throw ModelError("architecture has an empty layer");
        if (arch == Arch::dgcnn && k < 1) throw ModelError("mini-dgcnn needs k >= 1");
    }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <std::floating_point Real>
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<Real> data;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named parameter arrays of a classifier, in canonical layer order:
/// "<layer>.weight" (out x in, row-major) followed by "<layer>.bias".
template <std::floating_point Real>
struct ModelParams {
    ArchSpec spec;
    std::vector<std::pair<std::string, Tensor<Real>>> arrays;

    const Tensor<Real>& at(std::string_view name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        throw ModelError("missing parameter array '" + std::string(name) + "'");
    }
    Tensor<Real>& at(std::string_view name) {
        return const_cast<Tensor<Real>&>(std::as_const(*this).at(name));
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : arrays) n += t.data.size();
        return n;
    }

    /// Throws ModelError unless every array matches the descriptor exactly
    /// and holds only finite values.
    void validate() const {
        spec.validate();
        const auto layers = spec.layers();
        if (arrays.size() != 2 * layers.size())
            throw ModelError("expected " + std::to_string(2 * layers.size()) + " arrays, got " +
                             std::to_string(arrays.size()));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& [wn, w] = arrays[2 * l];
            const auto& [bn, b] = arrays[2 * l + 1];
            const auto& L = layers[l];
            if (wn != L.name + ".weight" || bn != L.name + ".bias")
                throw ModelError("unexpected array names for layer " + L.name);
            if (w.dims != std::vector<std::size_t>{L.out, L.in} || w.data.size() != L.out * L.in)
                throw ModelError("shape mismatch in " + wn);
            if (b.dims != std::vector<std::size_t>{L.out} || b.data.size() != L.out)
                throw ModelError("shape mismatch in " + bn);
            for (const auto* t : {&w, &b})
                for (Real v : t->data)
                    if (!std::isfinite(v)) throw ModelError("non-finite value in layer " + L.name);
        }
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// All-zero parameters with the shapes of `spec`.
template <std::floating_point Real>
ModelParams<Real> zero_params(const ArchSpec& spec) {
    spec.validate();
    ModelParams<Real> p;
    p.spec = spec;
    for (const auto& L : spec.layers()) {
        p.arrays.push_back({L.name + ".weight", {{L.out, L.in}, std::vector<Real>(L.out * L.in, Real(0))}});
        p.arrays.push_back({L.name + ".bias", {{L.out}, std::vector<Real>(L.out, Real(0))}});
    }
    return p;
}

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
template <std::floating_point Real>
ModelParams<Real> init_params(const ArchSpec& spec, std::uint64_t seed) {
    auto p = zero_params<Real>(spec);
    Rng rng(seed);
    for (auto& [name, t] : p.arrays) {
        if (t.dims.size() != 2) continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(t.dims[0] + t.dims[1]));
        for (auto& v : t.data) v = static_cast<Real>(uniform(rng, -bound, bound));
    }
    return p;
}

template <std::floating_point To, std::floating_point From>
ModelParams<To> params_cast(const ModelParams<From>& in) {
    ModelParams<To> out;
    out.spec = in.spec;
    for (const auto& [name, t] : in.arrays)
        out.arrays.push_back({name, {t.dims, std::vector<To>(t.data.begin(), t.data.end())}});
    return out;
}

// Checkpoint: "NNM1", str arch, u32 C, u32 k, u32 array count, then per array
// str name, u32 rank, u32 dims..., f32 payload. Strings are u32 length + bytes.

inline constexpr std::string_view kCheckpointMagic = "NNM1";

inline Bytes encode_checkpoint(const ModelParams<float>& params) {
    params.validate();
    ByteWriter w;
    w.raw(kCheckpointMagic);
    w.str(to_string(params.spec.arch));
    w.u32(static_cast<std::uint32_t>(params.spec.classes));
    w.u32(static_cast<std::uint32_t>(params.spec.k));
    w.u32(static_cast<std::uint32_t>(params.arrays.size()));
    for (const auto& [name, t] : params.arrays) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data) w.f32(v);
    }
    return std::move(w).bytes();
}

inline ModelParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.raw(4) != kCheckpointMagic) throw ParseError("not an NNM1 checkpoint (bad magic)");
    ModelParams<float> p;
    const auto arch = parse_arch(r.str());
    if (!arch) throw ModelError("unknown architecture tag in checkpoint");
    p.spec.arch = *arch;
    p.spec.classes = r.u32();
    p.spec.k = r.u32();
    const auto count = r.u32();
    for (std::uint32_t a = 0; a < count; ++a) {
        std::string name = r.str();
        Tensor<float> t;
        const auto rank = r.u32();
        if (rank < 1 || rank > 2) throw ModelError("array '" + name + "' has unsupported rank");
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            t.dims.push_back(r.u32());
            n *= t.dims.back();
        }
        if (n > (std::size_t{1} << 28)) throw ModelError("array '" + name + "' is implausibly large");
        t.data.resize(n);
        for (auto& v : t.data) v = r.f32();
        p.arrays.push_back({std::move(name), std::move(t)});
    }
    if (!r.at_end()) throw ParseError("trailing bytes after checkpoint payload");

    // Layer widths are implied by the weight shapes.
    if (p.arrays.size() < 6 || p.arrays.size() % 2) throw ModelError("checkpoint has an invalid array count");
    const std::size_t point_layers = p.arrays.size() / 2 - 2;
    for (std::size_t l = 0; l < point_layers; ++l) {
        const auto& dims = p.arrays[2 * l].second.dims;
        if (dims.size() != 2) throw ModelError("weight array must be rank 2");
        p.spec.point_widths.push_back(dims[0]);
    }
    const auto& fc1 = p.arrays[2 * point_layers].second.dims;
    if (fc1.size() != 2) throw ModelError("weight array must be rank 2");
    p.spec.head_width = fc1[0];
    p.validate();
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
    write_file(path, encode_checkpoint(params));
}

inline ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

} // namespace nudge::nn
