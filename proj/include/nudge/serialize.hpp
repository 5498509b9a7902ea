#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "pointcloud.hpp"

namespace nudge {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian append-only writer.
class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    const Bytes& bytes() const& noexcept { return bytes_; }
    Bytes bytes() && noexcept { return std::move(bytes_); }

private:
    Bytes bytes_;
};

/// Little-endian reader; throws ParseError on truncation.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(u32()); }

    bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw ParseError("truncated binary data at byte " + std::to_string(pos_));
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    auto b = read_file(path);
    return std::string(b.begin(), b.end());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

/// 64-bit FNV-1a, printed as 16 hex digits. Identifies checkpoints in reports.
inline std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// NPC1 cloud container: "NPC1", u32 P, u32 has_label, i32 label, P*3 f32.

inline constexpr std::string_view kCloudMagic = "NPC1";

inline Bytes encode_cloud(const PointCloud<float>& cloud) {
    ByteWriter w;
    w.raw(kCloudMagic);
    w.u32(static_cast<std::uint32_t>(cloud.size()));
    w.u32(cloud.label ? 1u : 0u);
    w.i32(cloud.label.value_or(-1));
    for (float v : cloud.flat()) w.f32(v);
    return std::move(w).bytes();
}

inline PointCloud<float> decode_cloud(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.raw(4) != kCloudMagic) throw ParseError("not an NPC1 cloud (bad magic)");
    const auto n = r.u32();
    const auto has_label = r.u32();
    const auto label = r.i32();
    if (has_label > 1) throw ParseError("NPC1 has_label must be 0 or 1");
    PointCloud<float> cloud;
    if (has_label) cloud.label = label;
    cloud.points.resize(n);
    for (float& v : cloud.flat()) v = r.f32();
    if (!r.at_end()) throw ParseError("trailing bytes after NPC1 payload");
    return cloud;
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud<float>& cloud) {
    write_file(path, encode_cloud(cloud));
}

inline PointCloud<float> load_cloud(const std::filesystem::path& path) {
    try {
        return decode_cloud(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace nudge
