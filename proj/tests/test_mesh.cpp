#include <gtest/gtest.h>

#include "support.hpp"

using namespace nudge;

namespace {

int parse_error_line(const std::string& text) {
    try {
        parse_off(text);
    } catch (const ParseError& e) {
        return static_cast<int>(e.line());
    }
    return -1;
}

} // namespace

TEST(Off, MinimalTriangle) {
    auto m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    EXPECT_EQ(m.vertices.size(), 3u);
    ASSERT_EQ(m.faces.size(), 1u);
    EXPECT_EQ(m.faces[0], (std::array<std::uint32_t, 3>{0, 1, 2}));
}

TEST(Off, QuadIsFanned) {
    auto m = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
    ASSERT_EQ(m.faces.size(), 2u);
    EXPECT_EQ(m.faces[0], (std::array<std::uint32_t, 3>{0, 1, 2}));
    EXPECT_EQ(m.faces[1], (std::array<std::uint32_t, 3>{0, 2, 3}));
}

TEST(Off, CommentsAndBlankLines) {
    auto m = parse_off("# header comment\nOFF\n\n# counts\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    EXPECT_EQ(m.faces.size(), 1u);
}

TEST(Off, CountsGluedToHeader) {
    auto m = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    EXPECT_EQ(m.vertices.size(), 3u);
}

TEST(Off, ErrorsCarryLineNumbers) {
    EXPECT_EQ(parse_error_line("3 1 0\n0 0 0\n"), 1);                           // missing header
    EXPECT_EQ(parse_error_line("OFF\n3 1 0\n0 0 0\n1 0 0\n"), 5);             // fewer vertices than declared
    EXPECT_EQ(parse_error_line("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n"), 4); // non-numeric token
    EXPECT_EQ(parse_error_line("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n"), 6); // bad index
    EXPECT_EQ(parse_error_line("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n1 1 1\n"), 7); // extra content
    EXPECT_EQ(parse_error_line("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2\n"), 6); // face count mismatch
}

TEST(Off, SerializeRoundTrip) {
    TriangleMesh m;
    m.vertices = {{0.1, -2.5, 3e-7}, {1.0 / 3, 0, 1}, {7, 8, 9}, {-0.0001, 1e10, 2}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    const auto text = serialize_off(m);
    auto back = parse_off(text);
    EXPECT_EQ(back.vertices, m.vertices);
    EXPECT_EQ(back.faces, m.faces);
    EXPECT_EQ(serialize_off(back), text);
}

TEST(Off, SamplesLieOnTrianglePlane) {
    TriangleMesh m;
    m.vertices = {{0.2, -0.3, 0.5}, {1.0, 0.4, -0.2}, {-0.6, 0.9, 0.1}};
    m.faces = {{0, 1, 2}};
    auto c = sample_mesh_surface(m, 1000, 3);
    ASSERT_EQ(c.size(), 1000u);
    const auto& a = m.vertices[0];
    const double u[3] = {m.vertices[1][0] - a[0], m.vertices[1][1] - a[1], m.vertices[1][2] - a[2]};
    const double v[3] = {m.vertices[2][0] - a[0], m.vertices[2][1] - a[1], m.vertices[2][2] - a[2]};
    double n[3] = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    for (double& x : n) x /= len;
    for (const auto& p : c.points) {
        double r = 0;
        for (int d = 0; d < 3; ++d) r += n[d] * (p[d] - a[d]);
        EXPECT_LT(std::abs(r), 1e-6);
    }
}

TEST(Off, SamplingIsAreaWeighted) {
    // Two triangles of area 0.5 and 4.5 in the z = 0 plane.
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {10, 0, 0}, {13, 0, 0}, {10, 3, 0}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    auto c = sample_mesh_surface(m, 20000, 4);
    std::size_t big = 0;
    for (const auto& p : c.points) big += p[0] >= 10;
    EXPECT_NEAR(double(big) / 20000, 0.9, 0.01);
}

TEST(Off, SamplingDeterministic) {
    auto m = parse_off("OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 1\n3 0 1 2\n3 0 2 3\n");
    EXPECT_EQ(encode_cloud(sample_mesh_surface(m, 64, 1)), encode_cloud(sample_mesh_surface(m, 64, 1)));
}
