#include <gtest/gtest.h>

#include "support.hpp"

using namespace nudge;
using namespace nudge::testing;

namespace {

/// Model whose loss gradient is a fixed field, for exact phase checks.
struct FieldModel {
    std::vector<Point3<float>> field;
    int prediction = 0;

    struct Session {
        const FieldModel* m;
        int predict(const PointCloud<float>&) { return m->prediction; }
        nn::LossGradient<float> loss_gradient(const PointCloud<float>&, int) {
            nn::LossGradient<float> g;
            g.gradient = m->field;
            return g;
        }
    };
    Session session() const { return {this}; }
};

nn::Classifier<float> small_model(std::uint64_t seed) {
    return nn::Classifier<float>(random_params<float>(tiny_pointnet(3), seed));
}

} // namespace

TEST(GradConfig, PaperAdversaries) {
    const auto w = GradAttackConfig::weak(1), m = GradAttackConfig::moderate(1), s = GradAttackConfig::strong(1);
    EXPECT_EQ(w.iterations, 10u);
    EXPECT_DOUBLE_EQ(w.epsilon, 0.05);
    EXPECT_EQ(m.iterations, 50u);
    EXPECT_DOUBLE_EQ(m.epsilon, 0.2);
    EXPECT_EQ(s.iterations, 200u);
    EXPECT_DOUBLE_EQ(s.epsilon, 0.5);
}

TEST(GradConfig, Validation) {
    EXPECT_THROW((GradAttackConfig{0.0, 1, 1}.validate(4)), InvalidInput);
    EXPECT_THROW((GradAttackConfig{0.1, 0, 1}.validate(4)), InvalidInput);
    EXPECT_THROW((GradAttackConfig{0.1, 1, 0}.validate(4)), InvalidInput);
    EXPECT_THROW((GradAttackConfig{0.1, 1, 5}.validate(4)), InvalidInput);
    EXPECT_THROW((GradAttackConfig{0.1, 1, 1, AttackMode::targeted}.validate(4)), InvalidInput);
    EXPECT_THROW((GradAttackConfig{0.1, 1, 1, AttackMode::targeted, 2}.validate(4, 2)), InvalidInput);
    GradAttackConfig{0.1, 1, 4, AttackMode::targeted, 1}.validate(4, 2);
}

TEST(Locate, ZeroModelPicksFirstIndices) {
    nn::Classifier<float> m(nn::zero_params<float>(nn::ArchSpec::mini_pointnet(3)));
    const auto mask = locate_vulnerable_points<float>(m, random_cloud(10, 1), 0, AttackMode::untargeted, 5, 3);
    EXPECT_EQ(mask.selected, (std::vector<bool>{true, true, true, false, false, false, false, false, false, false}));
    EXPECT_EQ(mask.threshold, 0.0);
    EXPECT_EQ(mask.count(), 3u);
}

TEST(Locate, FullBudgetSelectsEverything) {
    const auto mask = locate_vulnerable_points<float>(small_model(1), random_cloud(12, 2), 1, AttackMode::untargeted, 4, 12);
    EXPECT_EQ(mask.count(), 12u);
}

TEST(Locate, ThresholdIsWeakestSelectedScore) {
    const auto mask = locate_vulnerable_points<float>(small_model(2), random_cloud(16, 3), 2, AttackMode::untargeted, 6, 5);
    EXPECT_EQ(mask.count(), 5u);
    double lowest = 1e300, best_unselected = -1;
    for (std::size_t i = 0; i < 16; ++i)
        (mask.selected[i] ? lowest : best_unselected) =
            mask.selected[i] ? std::min(lowest, mask.scores[i]) : std::max(best_unselected, mask.scores[i]);
    EXPECT_EQ(mask.threshold, lowest);
    EXPECT_GE(lowest, best_unselected);
}

TEST(Locate, LinearModelMatchesDirectAccumulation) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto lin = LinearModel::random(2, 4, s);
        const auto x = random_cloud(4, 50 + s);
        const int y = lin.predict(x);
        for (auto mode : {AttackMode::untargeted, AttackMode::targeted}) {
            const int label = mode == AttackMode::untargeted ? y : 1 - y;
            // Direct 64-bit phase one.
            std::vector<std::array<double, 3>> xd(4);
            for (int p = 0; p < 4; ++p)
                for (int d = 0; d < 3; ++d) xd[p][d] = x.points[p][d];
            for (int it = 0; it < 7; ++it) {
                std::vector<double> z(lin.b);
                for (int c = 0; c < 2; ++c)
                    for (int p = 0; p < 4; ++p)
                        for (int d = 0; d < 3; ++d) z[c] += lin.W[(c * 4 + p) * 3 + d] * xd[p][d];
                auto pr = nn::softmax<double>(z);
                pr[label] -= 1;
                for (int p = 0; p < 4; ++p)
                    for (int d = 0; d < 3; ++d) {
                        const double g = pr[0] * lin.W[p * 3 + d] + pr[1] * lin.W[(4 + p) * 3 + d];
                        xd[p][d] += mode == AttackMode::untargeted ? g : -g;
                    }
            }
            std::size_t best = 0;
            double best_score = -1;
            for (std::size_t p = 0; p < 4; ++p) {
                double s2 = 0;
                for (int d = 0; d < 3; ++d) s2 += (xd[p][d] - x.points[p][d]) * (xd[p][d] - x.points[p][d]);
                if (std::sqrt(s2) > best_score + 1e-9) best_score = std::sqrt(s2), best = p;
            }
            const auto mask = locate_vulnerable_points<float>(lin, x, label, mode, 7, 1);
            EXPECT_TRUE(mask.selected[best]) << "seed " << s;
            EXPECT_NEAR(mask.threshold, best_score, 1e-4 * std::max(1.0, best_score));
        }
    }
}

TEST(Locate, NonFiniteGradientNamesIteration) {
    FieldModel m{{{std::numeric_limits<float>::infinity(), 0, 0}, {0, 0, 0}}};
    try {
        locate_vulnerable_points<float>(m, random_cloud(2, 1), 0, AttackMode::untargeted, 3, 1);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
    }
}

TEST(Locate, CheckpointsMatchSingleRuns) {
    const auto m = small_model(3);
    const auto x = random_cloud(20, 4);
    const std::vector<std::size_t> cps{1, 3, 8};
    const auto masks = locate_vulnerable_points_at<float>(m, x, 1, AttackMode::untargeted, cps, 4);
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const auto one = locate_vulnerable_points<float>(m, x, 1, AttackMode::untargeted, cps[i], 4);
        EXPECT_EQ(masks[i].selected, one.selected);
        EXPECT_EQ(masks[i].scores, one.scores);
    }
}

TEST(SignDescent, SingleStepMovesByEpsilon) {
    FieldModel m{{{1, 2, 3}, {1, 1, 1}, {-1, 0, 5}}};
    auto x = random_cloud(3, 5);
    const std::vector<bool> mask{true, false, true};
    auto out = masked_sign_descent<float>(m, x, 0, AttackMode::untargeted, mask, 0.25, 1);
    for (int d = 0; d < 3; ++d) {
        EXPECT_NEAR(out.points[0][d] - x.points[0][d], 0.25, 1e-6);
        EXPECT_EQ(out.points[1][d], x.points[1][d]);
    }
    EXPECT_NEAR(out.points[2][0] - x.points[2][0], -0.25, 1e-6);
    EXPECT_EQ(out.points[2][1], x.points[2][1]); // sign(0) = 0
    EXPECT_NEAR(out.points[2][2] - x.points[2][2], 0.25, 1e-6);
    auto targeted = masked_sign_descent<float>(m, x, 0, AttackMode::targeted, mask, 0.25, 1);
    EXPECT_NEAR(targeted.points[0][0] - x.points[0][0], -0.25, 1e-6);
}

TEST(SignDescent, EmptyMaskIsIdentity) {
    const auto x = random_cloud(16, 6);
    auto out = masked_sign_descent<float>(small_model(4), x, 0, AttackMode::untargeted, std::vector<bool>(16, false), 0.5, 10);
    EXPECT_EQ(encode_cloud(out), encode_cloud(x));
}

TEST(SignDescent, ZeroGradientStaysPut) {
    FieldModel m{{{0, 0, 0}, {0, 0, 0}}};
    const auto x = random_cloud(2, 7);
    auto out = masked_sign_descent<float>(m, x, 0, AttackMode::untargeted, {true, true}, 0.3, 20);
    EXPECT_EQ(out, x);
}

TEST(SignDescent, BoxBoundIsExact) {
    // Constant gradient sign: every step goes the same way, so the offset
    // reaches n * eps, the worst case for float rounding.
    FieldModel m{{{1, -1, 1}, {-1, 1, 1}, {1, 1, -1}}};
    for (double eps : {0.001, 0.01, 0.1, 0.3, 0.7}) {
        auto x = random_cloud(3, 8, 50.0);
        for (std::size_t n : {1, 3, 10, 333}) {
            auto out = masked_sign_descent<float>(m, x, 0, AttackMode::untargeted, {true, true, true}, eps, n);
            const auto norms = perturbation_norms(x, out);
            EXPECT_LE(norms.linf, eps * static_cast<double>(n)) << eps << " " << n;
            EXPECT_GT(norms.linf, 0.5 * eps * static_cast<double>(n));
        }
    }
}

TEST(SignDescent, CheckpointsMatchSingleRuns) {
    const auto m = small_model(5);
    const auto x = random_cloud(20, 9);
    std::vector<bool> mask(20, false);
    mask[3] = mask[7] = true;
    const std::vector<std::size_t> cps{2, 5, 5, 9};
    const auto outs = masked_sign_descent_at<float>(m, x, 0, AttackMode::untargeted, mask, 0.05, cps);
    ASSERT_EQ(outs.size(), 4u);
    for (std::size_t i = 0; i < cps.size(); ++i)
        EXPECT_EQ(outs[i], masked_sign_descent<float>(m, x, 0, AttackMode::untargeted, mask, 0.05, cps[i]));
}

TEST(NudgeGrad, SparsityAndBoxBound) {
    for (std::uint64_t s = 0; s < 40; ++s) {
        const auto m = small_model(s);
        auto x = random_cloud(24, 100 + s);
        Rng rng(s);
        GradAttackConfig cfg{uniform(rng, 0.001, 0.5), 1 + uniform_index(rng, 20), 1 + uniform_index(rng, 24)};
        if (s % 2) {
            cfg.mode = AttackMode::targeted;
            cfg.target_class = static_cast<int>((s + 1) % 3);
        }
        const int y = static_cast<int>(s % 3);
        const auto r = nudge_grad<float>(m, x, y, cfg);
        EXPECT_LE(r.edited, cfg.budget);
        EXPECT_LE(r.linf, cfg.epsilon * static_cast<double>(cfg.iterations));
        const auto mask = locate_vulnerable_points<float>(m, x, cfg.mode == AttackMode::untargeted ? y : *cfg.target_class,
                                                          cfg.mode, cfg.iterations, cfg.budget);
        for (std::size_t p = 0; p < x.size(); ++p)
            if (!mask.selected[p]) EXPECT_EQ(r.adversarial.points[p], x.points[p]);
    }
}

TEST(NudgeGrad, SuccessFlagMatchesRecomputedPredictions) {
    auto ds = synth_dataset(4, 64, 0.05, 3, Split::test);
    auto trained = nn::train_model(tiny_pointnet(5), synth_dataset(8, 64, 0.05, 2, Split::train), {20, 0.02, 0.9, 8, 1});
    nn::Classifier<float> m(trained.params);
    for (const auto& x : ds.clouds) {
        const auto r = nudge_grad<float>(m, x, *x.label, GradAttackConfig::moderate(4));
        const auto before = m.predict(x), after = m.predict(r.adversarial);
        EXPECT_EQ(r.pred_before, before);
        EXPECT_EQ(r.pred_after, after);
        EXPECT_EQ(r.success, after != before);
        EXPECT_EQ(r.adversarial.label, x.label);
    }
}

TEST(NudgeGrad, TargetedSuccessMeansTargetHit) {
    const auto m = small_model(6);
    const auto x = random_cloud(16, 7);
    for (int t = 0; t < 3; ++t) {
        if (t == 0) continue;
        const auto r = nudge_grad<float>(m, x, 0, {0.2, 30, 3, AttackMode::targeted, t});
        EXPECT_EQ(r.success, r.pred_after == t);
        EXPECT_EQ(r.target_class, t);
    }
}

TEST(NudgeGrad, AttemptsMisclassifiedInputs) {
    nn::Classifier<float> m(nn::zero_params<float>(nn::ArchSpec::mini_pointnet(3)));
    const auto r = nudge_grad<float>(m, random_cloud(8, 1), 2, GradAttackConfig::weak(2));
    EXPECT_EQ(r.pred_before, 0);
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.edited, 0u);
}

TEST(NudgeGrad, WorksOnDgcnn) {
    nn::Classifier<float> m(random_params<float>(tiny_dgcnn(3), 2));
    const auto x = random_cloud(12, 3);
    const auto r = nudge_grad<float>(m, x, 1, {0.1, 5, 2});
    EXPECT_LE(r.edited, 2u);
    EXPECT_LE(r.linf, 0.5);
}
