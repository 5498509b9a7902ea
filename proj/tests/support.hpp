#pragma once

#include <cmath>
#include <vector>

#include <nudge/nudge.hpp>

namespace nudge::testing {

template <std::floating_point Real = float>
PointCloud<Real> random_cloud(std::size_t P, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    PointCloud<Real> c;
    for (std::size_t i = 0; i < P; ++i)
        c.points.push_back({static_cast<Real>(uniform(rng, -scale, scale)), static_cast<Real>(uniform(rng, -scale, scale)),
                            static_cast<Real>(uniform(rng, -scale, scale))});
    return c;
}

inline nn::ArchSpec tiny_pointnet(std::size_t classes) { return {nn::Arch::pointnet, classes, {8, 12}, 8, 0}; }
inline nn::ArchSpec tiny_dgcnn(std::size_t classes, std::size_t k = 3) { return {nn::Arch::dgcnn, classes, {6, 8}, 8, k}; }

/// Seeded weights plus small random biases, so ReLU patterns are not trivial.
template <std::floating_point Real>
nn::ModelParams<Real> random_params(const nn::ArchSpec& spec, std::uint64_t seed) {
    auto p = nn::init_params<Real>(spec, seed);
    Rng rng(derive_seed(seed, {0xb1a5}));
    for (auto& [name, t] : p.arrays)
        if (t.dims.size() == 1)
            for (auto& v : t.data) v = static_cast<Real>(uniform(rng, -0.1, 0.1));
    return p;
}

/// Loss of a 64-bit model at `x`, straight from the forward pass.
inline double loss_at(const nn::Classifier<double>& m, const PointCloud<double>& x, int label) {
    const auto z = m.logits(x);
    return nn::cross_entropy_loss<double>(z, label);
}

/// Every discrete choice the forward pass makes: ReLU signs, pool winners,
/// kNN graphs and per-channel neighbor winners. The loss is smooth in x
/// while this stays fixed.
inline std::vector<std::uint32_t> activation_pattern(const nn::ModelParams<double>& params, const PointCloud<double>& x) {
    std::vector<std::uint32_t> sig;
    auto signs = [&](const std::vector<double>& v) {
        for (double a : v) sig.push_back(a > 0);
    };
    if (params.spec.arch == nn::Arch::pointnet) {
        nn::PointNetState<double> st;
        nn::PointNet<double>(params).forward(x, st);
        for (const auto& f : st.features) signs(f);
        signs(st.hidden);
        sig.insert(sig.end(), st.winner.begin(), st.winner.end());
    } else {
        nn::DgcnnState<double> st;
        nn::Dgcnn<double>(params).forward(x, st);
        for (const auto& b : st.blocks) {
            signs(b.output);
            sig.insert(sig.end(), b.graph.indices.begin(), b.graph.indices.end());
            sig.insert(sig.end(), b.best_neighbor.begin(), b.best_neighbor.end());
        }
        signs(st.hidden);
        sig.insert(sig.end(), st.winner.begin(), st.winner.end());
    }
    return sig;
}

/// Fourth-order central differences with step h on a 64-bit model. A
/// coordinate whose stencil changes the activation pattern straddles a kink
/// and gets NaN (no valid finite-difference reference there).
inline std::vector<Point3<double>> finite_difference_gradient(const nn::Classifier<double>& m,
                                                              const PointCloud<double>& x, int label,
                                                              double h = 1e-3) {
    std::vector<Point3<double>> g(x.size());
    const auto base = activation_pattern(m.params(), x);
    PointCloud<double> y = x;
    for (std::size_t p = 0; p < x.size(); ++p)
        for (int d = 0; d < 3; ++d) {
            bool smooth = true;
            auto at = [&](double off) {
                y.points[p][d] = x.points[p][d] + off;
                smooth = smooth && activation_pattern(m.params(), y) == base;
                return loss_at(m, y, label);
            };
            const double f1 = at(h), f_1 = at(-h), f2 = at(2 * h), f_2 = at(-2 * h);
            y.points[p][d] = x.points[p][d];
            g[p][d] = smooth ? (8 * (f1 - f_1) - (f2 - f_2)) / (12 * h) : std::numeric_limits<double>::quiet_NaN();
        }
    return g;
}

/// max |a - f| / max(|f|, floor) over the coordinates with a valid reference.
template <std::floating_point Real>
double max_relative_error(const std::vector<Point3<Real>>& analytic, const std::vector<Point3<double>>& reference,
                          double floor = 1e-6, std::size_t* compared = nullptr) {
    double worst = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < reference.size(); ++p)
        for (int d = 0; d < 3; ++d) {
            const double f = reference[p][d];
            if (std::isnan(f)) continue;
            ++n;
            worst = std::max(worst, std::abs(static_cast<double>(analytic[p][d]) - f) / std::max(std::abs(f), floor));
        }
    if (compared) *compared = n;
    return worst;
}

/// Linear classifier over the flattened cloud: z_c = sum W[c][p][d] x[p][d] + b[c].
/// Exposes the session interface the gradient attack expects plus plain
/// probabilities for the grey-box attack.
struct LinearModel {
    std::size_t classes = 2, points = 4;
    std::vector<double> W; // classes x points x 3
    std::vector<double> b;

    static LinearModel random(std::size_t classes, std::size_t points, std::uint64_t seed) {
        LinearModel m{classes, points, {}, {}};
        Rng rng(seed);
        for (std::size_t i = 0; i < classes * points * 3; ++i) m.W.push_back(gaussian(rng));
        for (std::size_t c = 0; c < classes; ++c) m.b.push_back(gaussian(rng, 0.5));
        return m;
    }

    std::vector<double> logits(const PointCloud<float>& x) const {
        std::vector<double> z(b);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t p = 0; p < points; ++p)
                for (int d = 0; d < 3; ++d) z[c] += W[(c * points + p) * 3 + d] * x.points[p][d];
        return z;
    }
    std::vector<double> probabilities(const PointCloud<float>& x) const { return nn::softmax<double>(logits(x)); }
    int predict(const PointCloud<float>& x) const { return nn::argmax(logits(x)); }

    struct Session {
        const LinearModel* m;
        int predict(const PointCloud<float>& x) { return m->predict(x); }
        nn::LossGradient<float> loss_gradient(const PointCloud<float>& x, int label) {
            const auto z = m->logits(x);
            auto p = nn::softmax<double>(z);
            p[static_cast<std::size_t>(label)] -= 1;
            nn::LossGradient<float> out;
            out.loss = static_cast<float>(nn::cross_entropy_loss<double>(z, label));
            out.logits.assign(z.begin(), z.end());
            out.gradient.assign(m->points, {0, 0, 0});
            for (std::size_t pt = 0; pt < m->points; ++pt)
                for (int d = 0; d < 3; ++d) {
                    double g = 0;
                    for (std::size_t c = 0; c < m->classes; ++c) g += p[c] * m->W[(c * m->points + pt) * 3 + d];
                    out.gradient[pt][d] = static_cast<float>(g);
                }
            return out;
        }
    };
    Session session() const { return {this}; }
};

} // namespace nudge::testing
