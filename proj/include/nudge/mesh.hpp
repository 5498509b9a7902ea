#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "pointcloud.hpp"
#include "random.hpp"

namespace nudge {

/// Triangle mesh. Polygons are fan-triangulated on load.
struct TriangleMesh {
    std::vector<Point3<double>> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;

    friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class T>
T parse_number(std::string_view tok, std::size_t line) {
    T value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError("non-numeric token '" + std::string(tok) + "'", line);
    return value;
}

} // namespace detail

/// Parses an ASCII OFF file. Blank lines and '#' comments are skipped. The
/// ModelNet quirk of counts glued to the header ("OFF490 518 0") is accepted.
inline TriangleMesh parse_off(std::string_view text) {
    struct Line {
        std::size_t number;
        std::vector<std::string_view> tokens;
    };
    std::vector<Line> lines;
    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++number;
        std::string_view line = text.substr(pos, end - pos);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto tokens = detail::split_ws(line);
        if (!tokens.empty()) lines.push_back({number, std::move(tokens)});
        pos = end + 1;
    }

    if (lines.empty()) throw ParseError("empty OFF file", 1);
    std::size_t cursor = 0;
    auto& header = lines[cursor].tokens;
    if (header[0].substr(0, 3) != "OFF") throw ParseError("missing OFF header", lines[cursor].number);

    std::vector<std::string_view> counts;
    if (header[0].size() > 3) counts.push_back(header[0].substr(3));
    counts.insert(counts.end(), header.begin() + 1, header.end());
    std::size_t counts_line = lines[cursor].number;
    ++cursor;
    if (counts.empty()) {
        if (cursor >= lines.size()) throw ParseError("missing counts line", counts_line + 1);
        counts = lines[cursor].tokens;
        counts_line = lines[cursor].number;
        ++cursor;
    }
    if (counts.size() < 2) throw ParseError("counts line needs 'V F E'", counts_line);
    const auto nv = detail::parse_number<std::size_t>(counts[0], counts_line);
    const auto nf = detail::parse_number<std::size_t>(counts[1], counts_line);
    if (counts.size() > 2) detail::parse_number<std::size_t>(counts[2], counts_line);

    TriangleMesh mesh;
    mesh.vertices.reserve(nv);
    for (std::size_t v = 0; v < nv; ++v, ++cursor) {
        if (cursor >= lines.size())
            throw ParseError("expected " + std::to_string(nv) + " vertices, found " + std::to_string(v),
                             number);
        const auto& l = lines[cursor];
        if (l.tokens.size() < 3) throw ParseError("vertex line needs 3 coordinates", l.number);
        Point3<double> p;
        for (int d = 0; d < 3; ++d) {
            p[d] = detail::parse_number<double>(l.tokens[d], l.number);
            if (!std::isfinite(p[d])) throw ParseError("non-finite vertex coordinate", l.number);
        }
        mesh.vertices.push_back(p);
    }
    for (std::size_t f = 0; f < nf; ++f, ++cursor) {
        if (cursor >= lines.size())
            throw ParseError("expected " + std::to_string(nf) + " faces, found " + std::to_string(f), number);
        const auto& l = lines[cursor];
        const auto n = detail::parse_number<std::size_t>(l.tokens[0], l.number);
        if (n < 3) throw ParseError("face needs at least 3 vertices", l.number);
        if (l.tokens.size() < n + 1) throw ParseError("face line shorter than its vertex count", l.number);
        std::vector<std::uint32_t> idx(n);
        for (std::size_t t = 0; t < n; ++t) {
            idx[t] = detail::parse_number<std::uint32_t>(l.tokens[t + 1], l.number);
            if (idx[t] >= nv) throw ParseError("face references vertex " + std::to_string(idx[t]), l.number);
        }
        for (std::size_t t = 1; t + 1 < n; ++t) mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
    }
    if (cursor != lines.size()) throw ParseError("trailing content after declared faces", lines[cursor].number);
    return mesh;
}

/// Writes the mesh as OFF with shortest round-trip number formatting.
inline std::string serialize_off(const TriangleMesh& mesh) {
    std::string out = "OFF\n" + std::to_string(mesh.vertices.size()) + " " + std::to_string(mesh.faces.size()) +
                      " 0\n";
    char buf[64];
    for (const auto& v : mesh.vertices) {
        for (int d = 0; d < 3; ++d) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v[d]);
            out.append(buf, ptr);
            out.push_back(d < 2 ? ' ' : '\n');
        }
    }
    for (const auto& f : mesh.faces)
        out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
    return out;
}

/// Area-weighted uniform samples from the mesh surface.
inline PointCloud<float> sample_mesh_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
    detail::require(n >= 1, "sample_mesh_surface: n must be >= 1");
    detail::require(!mesh.faces.empty(), "sample_mesh_surface: mesh has no faces");

    std::vector<double> cumulative;
    cumulative.reserve(mesh.faces.size());
    double total = 0;
    for (const auto& f : mesh.faces) {
        const auto& a = mesh.vertices[f[0]];
        const auto& b = mesh.vertices[f[1]];
        const auto& c = mesh.vertices[f[2]];
        const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        const double cx = u[1] * v[2] - u[2] * v[1];
        const double cy = u[2] * v[0] - u[0] * v[2];
        const double cz = u[0] * v[1] - u[1] * v[0];
        total += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
        cumulative.push_back(total);
    }
    detail::require(total > 0, "sample_mesh_surface: mesh has zero surface area");

    Rng rng(seed);
    PointCloud<float> out;
    out.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = uniform01(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        if (it == cumulative.end()) --it;
        const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
        const double s = std::sqrt(uniform01(rng));
        const double t = uniform01(rng);
        const double wa = 1 - s, wb = s * (1 - t), wc = s * t;
        Point3<float> p;
        for (int d = 0; d < 3; ++d)
            p[d] = static_cast<float>(wa * mesh.vertices[f[0]][d] + wb * mesh.vertices[f[1]][d] +
                                      wc * mesh.vertices[f[2]][d]);
        out.points.push_back(p);
    }
    return out;
}

} // namespace nudge
