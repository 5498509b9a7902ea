#include <gtest/gtest.h>

#include "support.hpp"

using namespace nudge;
using namespace nudge::testing;

namespace {

const Dataset& small_set() {
    static const Dataset ds = synth_dataset(3, 48, 0.08, 11, Split::test);
    return ds;
}

nn::Classifier<float> model(std::uint64_t seed = 1) {
    return nn::Classifier<float>(random_params<float>(tiny_pointnet(5), seed));
}

AttackResult identity_attack(const nn::Classifier<float>& m, const PointCloud<float>& x, int y) {
    AttackResult r;
    r.true_label = y;
    r.pred_before = r.pred_after = m.predict(x);
    r.adversarial = x;
    return r;
}

} // namespace

TEST(Summarize, HandCounts) {
    std::vector<AttackResult> rs(4);
    rs[0] = {.true_label = 0, .pred_before = 0, .pred_after = 1, .success = true, .l2 = 1, .linf = 0.5, .edited = 2};
    rs[1] = {.true_label = 1, .pred_before = 1, .pred_after = 1, .l2 = 3, .linf = 1, .edited = 4};
    rs[2] = {.true_label = 2, .pred_before = 0, .pred_after = 2, .success = true, .l2 = 2, .linf = 0.25, .edited = 0};
    rs[3].true_label = 1;
    rs[3].error = "boom";
    const auto s = summarize("x", json::object(), rs);
    EXPECT_EQ(s.samples, 4u);
    EXPECT_EQ(s.failures, 1u);
    EXPECT_DOUBLE_EQ(s.success_rate, 0.5);
    EXPECT_DOUBLE_EQ(s.adv_accuracy, 0.5);
    EXPECT_DOUBLE_EQ(s.initial_error_rate, 0.25);
    EXPECT_DOUBLE_EQ(s.mean_l2, 2);
    EXPECT_DOUBLE_EQ(s.max_l2, 3);
    EXPECT_DOUBLE_EQ(s.mean_linf, 1.75 / 3);
    EXPECT_DOUBLE_EQ(s.max_linf, 1);
    EXPECT_DOUBLE_EQ(s.mean_edited, 2);
}

TEST(Summarize, Empty) {
    const auto s = summarize("x", json::object(), {});
    EXPECT_EQ(s.samples, 0u);
    EXPECT_EQ(s.success_rate, 0);
}

TEST(SelectSlice, CoversOrSubsets) {
    EXPECT_EQ(select_slice(5, 9, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    const auto a = select_slice(100, 10, 3);
    EXPECT_EQ(a.size(), 10u);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
    EXPECT_EQ(a, select_slice(100, 10, 3));
    EXPECT_NE(a, select_slice(100, 10, 4));
}

TEST(ParallelFor, SameResultsAnyJobCountAndRethrows) {
    std::vector<int> a(50), b(50);
    parallel_for(50, 1, [&](std::size_t i) { a[i] = static_cast<int>(i * i); });
    parallel_for(50, 4, [&](std::size_t i) { b[i] = static_cast<int>(i * i); });
    EXPECT_EQ(a, b);
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw InvalidInput("x"); }), InvalidInput);
}

TEST(EvaluateBatch, IdentityAttack) {
    const auto m = model();
    const auto& ds = small_set();
    const auto slice = make_samples(ds, select_slice(ds.size(), ds.size(), 0));
    const auto out = evaluate_attack_batch(
        slice, [&](const PointCloud<float>& x, int y, std::size_t) { return identity_attack(m, x, y); }, "id", {});
    EXPECT_EQ(out.summary.success_rate, 0);
    EXPECT_EQ(out.summary.mean_l2, 0);
    EXPECT_DOUBLE_EQ(out.summary.adv_accuracy, 1.0 - out.summary.initial_error_rate);
    EXPECT_DOUBLE_EQ(out.summary.adv_accuracy, nn::evaluate_accuracy(m, ds));
}

TEST(EvaluateBatch, SingletonAndErrorCapture) {
    const auto& ds = small_set();
    const auto slice = make_samples(ds, {4});
    const auto out = evaluate_attack_batch(
        slice, [](const PointCloud<float>&, int, std::size_t) -> AttackResult { throw NumericError("nan"); }, "bad", {});
    ASSERT_EQ(out.results.size(), 1u);
    EXPECT_EQ(out.results[0].sample_id, 4u);
    EXPECT_EQ(out.results[0].error, "nan");
    EXPECT_EQ(out.summary.failures, 1u);
    EXPECT_THROW(evaluate_attack_batch({}, {}, "x", {}), InvalidInput);
}

TEST(EvaluateBatch, OrderAndJobsDoNotMatter) {
    const auto m = model(2);
    const auto& ds = small_set();
    auto idx = select_slice(ds.size(), ds.size(), 0);
    const GradAttackConfig cfg{0.05, 5, 3};
    auto fn = [&](const PointCloud<float>& x, int y, std::size_t) { return nudge_grad<float>(m, x, y, cfg); };
    const auto fwd = evaluate_attack_batch(make_samples(ds, idx), fn, "g", {}, 1);
    std::reverse(idx.begin(), idx.end());
    const auto rev = evaluate_attack_batch(make_samples(ds, idx), fn, "g", {}, 3);
    EXPECT_EQ(to_json(fwd.summary).dump(), to_json(rev.summary).dump());
    for (std::size_t i = 0; i < idx.size(); ++i)
        EXPECT_EQ(fwd.results[i].adversarial, rev.results[idx.size() - 1 - i].adversarial);
}

TEST(RandomTarget, NeverTrueLabelAndCoversOthers) {
    std::set<int> seen;
    for (std::size_t id = 0; id < 200; ++id) {
        const int t = random_target_class(2, 5, 9, id);
        EXPECT_NE(t, 2);
        EXPECT_GE(t, 0);
        EXPECT_LT(t, 5);
        EXPECT_EQ(t, random_target_class(2, 5, 9, id));
        seen.insert(t);
    }
    EXPECT_EQ(seen.size(), 4u);
    EXPECT_THROW(random_target_class(0, 1, 0, 0), InvalidInput);
}

TEST(Transfer, SelfTransferMatchesAttack) {
    const auto m = model(3);
    const auto& ds = small_set();
    std::vector<TransferPair> pairs;
    std::vector<bool> expected;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto r = nudge_grad<float>(m, ds.clouds[i], *ds.clouds[i].label, {0.1, 10, 4});
        pairs.push_back({i, ds.clouds[i], r.adversarial});
        expected.push_back(r.success);
    }
    const auto t = transfer_eval(pairs, {{"self", &m}});
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].success, expected);
}

TEST(Transfer, UnchangedCloudsNeverTransfer) {
    const auto m = model(4);
    const auto& ds = small_set();
    std::vector<TransferPair> pairs{{0, ds.clouds[0], ds.clouds[0]}, {1, ds.clouds[1], ds.clouds[1]}};
    EXPECT_EQ(transfer_eval(pairs, {{"a", &m}})[0].success_rate, 0);
    EXPECT_THROW(transfer_eval({}, {{"a", &m}}), InvalidInput);
}

TEST(Grid, OneCellEqualsBatch) {
    const auto m = model(5);
    const auto& ds = small_set();
    const auto slice = make_samples(ds, select_slice(ds.size(), 8, 1));
    const GradAttackConfig cfg{0.02, 7, 3};
    const auto cells = grid_search(m, slice, {{cfg.epsilon}, {cfg.iterations}, {cfg.budget}});
    ASSERT_EQ(cells.size(), 1u);
    const auto batch = evaluate_attack_batch(
        slice, [&](const PointCloud<float>& x, int y, std::size_t) { return nudge_grad<float>(m, x, y, cfg); }, "grad",
        grad_config_json(cfg));
    EXPECT_EQ(to_json(cells[0].batch.summary).dump(), to_json(batch.summary).dump());
    for (std::size_t i = 0; i < slice.size(); ++i)
        EXPECT_EQ(cells[0].batch.results[i].adversarial, batch.results[i].adversarial);
}

TEST(Grid, SharedWorkEqualsIndependentCells) {
    const auto m = model(6);
    const auto& ds = small_set();
    const auto slice = make_samples(ds, select_slice(ds.size(), 5, 2));
    for (auto mode : {AttackMode::untargeted, AttackMode::targeted}) {
        GridSpec g{{0.01, 0.1}, {12, 3, 6}, {1, 4}, mode, 77};
        const auto cells = grid_search(m, slice, g, 2);
        ASSERT_EQ(cells.size(), 12u);
        for (const auto& c : cells) {
            for (std::size_t i = 0; i < slice.size(); ++i) {
                const auto& x = *slice[i].cloud;
                GradAttackConfig cfg{c.epsilon, c.iterations, c.budget, mode};
                if (mode == AttackMode::targeted) cfg.target_class = random_target_class(*x.label, 5, 77, slice[i].id);
                const auto r = nudge_grad<float>(m, x, *x.label, cfg);
                EXPECT_EQ(c.batch.results[i].adversarial, r.adversarial);
                EXPECT_EQ(c.batch.results[i].success, r.success);
            }
        }
        EXPECT_TRUE(std::is_sorted(cells.begin(), cells.begin() + 3,
                                   [](const GridCell& a, const GridCell& b) { return a.iterations < b.iterations; }));
    }
}

TEST(Grid, BudgetTooLargeIsRecordedPerSample) {
    const auto m = model(7);
    const auto& ds = small_set();
    const auto slice = make_samples(ds, {0, 1});
    const auto cells = grid_search(m, slice, {{0.1}, {2}, {100}});
    EXPECT_EQ(cells[0].batch.summary.failures, 2u);
}

TEST(BestCell, TieBreaks) {
    std::vector<GridCell> cells(3);
    for (auto& c : cells) c.budget = 1;
    cells[0].batch.summary.success_rate = 0.5;
    cells[1].batch.summary.success_rate = 0.9;
    cells[1].batch.summary.adv_accuracy = 0.1;
    cells[2].batch.summary.success_rate = 0.9;
    cells[2].batch.summary.adv_accuracy = 0.05;
    EXPECT_EQ(&best_cell(cells, 1), &cells[2]);
    cells[2].batch.summary.adv_accuracy = 0.1;
    EXPECT_EQ(&best_cell(cells, 1), &cells[1]);
    EXPECT_THROW(best_cell(cells, 2), InvalidInput);
}

TEST(DefenseSweep, BaselineRowMatchesUndefended) {
    const auto m = model(8);
    const auto& ds = small_set();
    const auto slice = make_samples(ds, select_slice(ds.size(), ds.size(), 0));
    const std::vector<Attacker> attackers{{"a", {0.05, 5, 2}}, {"b", {0.2, 10, 8}}};
    const auto sweep = defense_sweep(m, slice, attackers, {4, 8, 4});
    ASSERT_EQ(sweep.rows.size(), 3u);
    EXPECT_EQ(sweep.rows[0].remove_k, 0u);
    EXPECT_EQ(sweep.rows[2].remove_k, 8u);
    EXPECT_DOUBLE_EQ(sweep.rows[0].clean_accuracy, nn::evaluate_accuracy(m, ds));
    for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(sweep.rows[0].success_rate[a], sweep.undefended[a].summary.success_rate);
    // Defended rows recomputed by hand.
    for (const auto& row : sweep.rows) {
        if (row.remove_k == 0) continue;
        for (std::size_t a = 0; a < 2; ++a) {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < slice.size(); ++i) {
                const auto& adv = sweep.undefended[a].results[i].adversarial;
                hits += nn::argmax(defended_predict(m, adv, row.remove_k)) !=
                        nn::argmax(defended_predict(m, *slice[i].cloud, row.remove_k));
            }
            EXPECT_DOUBLE_EQ(row.success_rate[a], static_cast<double>(hits) / static_cast<double>(slice.size()));
        }
    }
}

TEST(Serialization, AttackResultRoundTrip) {
    AttackResult r{.sample_id = 3, .true_label = 1, .pred_before = 1, .pred_after = 2, .target_class = 2,
                   .success = true, .l2 = 0.125, .linf = 0.0625, .edited = 4, .queries = 99, .error = "", .seconds = 5};
    const auto back = attack_result_from_json(to_json(r));
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
    EXPECT_FALSE(to_json(r).contains("seconds"));
    r.error = "bad";
    r.target_class.reset();
    EXPECT_EQ(attack_result_from_json(to_json(r)).error, "bad");
}

TEST(Serialization, CsvRowHasHeaderArity) {
    SummaryReport s;
    s.attack = "grad";
    s.config = grad_config_json({0.1, 5, 2});
    const auto header = summary_csv_header(), row = summary_csv_row(s);
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
    EXPECT_EQ(row.rfind("grad,grad,untargeted,2,0.1,5,,0,0,", 0), 0u);
}
