#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "attack/de.hpp"
#include "attack/grad.hpp"
#include "attack/result.hpp"
#include "defense.hpp"
#include "nn/classifier.hpp"
#include "pointcloud.hpp"
#include "random.hpp"

namespace nudge {

using json = nlohmann::ordered_json;

/// Aggregate of one attack over a slice.
struct SummaryReport {
    std::string attack;
    json config = json::object();
    std::size_t samples = 0;  // attempted
    std::size_t failures = 0; // samples whose attack raised an error
    double adv_accuracy = 0;  // adversarial clouds still classified as the true label
    double success_rate = 0;
    double initial_error_rate = 0; // clean predictions that miss the true label
    double mean_l2 = 0, max_l2 = 0;
    double mean_linf = 0, max_linf = 0;
    double mean_edited = 0;
};

/// Folds per-sample results in sample order. Failed samples count as
/// unsuccessful and are excluded from the norm statistics.
inline SummaryReport summarize(const std::string& attack, const json& config, const std::vector<AttackResult>& results) {
    SummaryReport s;
    s.attack = attack;
    s.config = config;
    s.samples = results.size();
    std::size_t ok = 0, adv_correct = 0, success = 0, initial_wrong = 0;
    for (const auto& r : results) {
        if (!r.error.empty()) {
            ++s.failures;
            continue;
        }
        ++ok;
        adv_correct += r.pred_after == r.true_label;
        success += r.success;
        initial_wrong += r.pred_before != r.true_label;
        s.mean_l2 += r.l2;
        s.mean_linf += r.linf;
        s.mean_edited += static_cast<double>(r.edited);
        s.max_l2 = std::max(s.max_l2, r.l2);
        s.max_linf = std::max(s.max_linf, r.linf);
    }
    if (s.samples) {
        const double n = static_cast<double>(s.samples);
        s.adv_accuracy = static_cast<double>(adv_correct) / n;
        s.success_rate = static_cast<double>(success) / n;
        s.initial_error_rate = static_cast<double>(initial_wrong) / n;
    }
    if (ok) {
        const double n = static_cast<double>(ok);
        s.mean_l2 /= n;
        s.mean_linf /= n;
        s.mean_edited /= n;
    }
    return s;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Work items write to
/// their own slots, so results never depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i; (i = next++) < n;) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Deterministic evaluation slice: every index when `count` covers the
/// dataset, otherwise a seeded uniform subset in ascending order.
inline std::vector<std::size_t> select_slice(std::size_t dataset_size, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(dataset_size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (count >= dataset_size) return idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + uniform_index(rng, dataset_size - i)]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// A sample to attack: its id in the source dataset and the cloud.
struct Sample {
    std::size_t id = 0;
    const PointCloud<float>* cloud = nullptr;
};

inline std::vector<Sample> make_samples(const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<Sample> out;
    for (auto i : indices) {
        detail::require(i < ds.size(), "slice index out of range");
        out.push_back({i, &ds.clouds[i]});
    }
    return out;
}

/// Attack callback: (cloud, true label, sample id) -> result.
using AttackFn = std::function<AttackResult(const PointCloud<float>&, int, std::size_t)>;

struct BatchResult {
    SummaryReport summary;
    std::vector<AttackResult> results; // in slice order
};

inline BatchResult evaluate_attack_batch(const std::vector<Sample>& slice, const AttackFn& attack,
                                         const std::string& attack_name, const json& config, std::size_t jobs = 1) {
    detail::require(!slice.empty(), "evaluate_attack_batch: empty slice");
    BatchResult out;
    out.results.resize(slice.size());
    parallel_for(slice.size(), jobs, [&](std::size_t i) {
        const auto& s = slice[i];
        detail::require(s.cloud->label.has_value(), "evaluate_attack_batch: unlabelled cloud");
        AttackResult r;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            r = attack(*s.cloud, *s.cloud->label, s.id);
        } catch (const Error& e) {
            r = AttackResult{};
            r.true_label = *s.cloud->label;
            r.error = e.what();
        }
        r.sample_id = s.id;
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.results[i] = std::move(r);
    });
    out.summary = summarize(attack_name, config, out.results);
    return out;
}

/// Target class for a targeted attack on sample `id`: uniform over the
/// classes other than `label`, seeded per sample.
inline int random_target_class(int label, std::size_t classes, std::uint64_t seed, std::size_t id) {
    detail::require(classes >= 2, "targeted attacks need at least two classes");
    Rng rng(derive_seed(seed, {0x74617267ULL, id}));
    const int pick = static_cast<int>(uniform_index(rng, classes - 1));
    return pick >= label ? pick + 1 : pick;
}

/// Untargeted transfer: an adversarial cloud succeeds on a target model when
/// that model's prediction differs from its own prediction on the original.
struct TransferPair {
    std::size_t sample_id = 0;
    PointCloud<float> original;
    PointCloud<float> adversarial;
};

struct TransferOutcome {
    std::string target;
    double success_rate = 0;
    std::vector<bool> success; // per pair
};

inline std::vector<TransferOutcome> transfer_eval(
    const std::vector<TransferPair>& pairs,
    const std::vector<std::pair<std::string, const nn::Classifier<float>*>>& targets) {
    detail::require(!pairs.empty(), "transfer_eval: no adversarial samples");
    for (const auto& p : pairs)
        detail::require(p.original.size() == p.adversarial.size(), "transfer_eval: point count mismatch");
    std::vector<TransferOutcome> out;
    for (const auto& [name, model] : targets) {
        TransferOutcome t;
        t.target = name;
        auto session = model->session();
        std::size_t hits = 0;
        for (const auto& p : pairs) {
            const bool s = session.predict(p.original) != session.predict(p.adversarial);
            t.success.push_back(s);
            hits += s;
        }
        t.success_rate = static_cast<double>(hits) / static_cast<double>(pairs.size());
        out.push_back(std::move(t));
    }
    return out;
}

struct GridSpec {
    std::vector<double> epsilons;
    std::vector<std::size_t> iterations;
    std::vector<std::size_t> budgets;
    AttackMode mode = AttackMode::untargeted;
    std::uint64_t target_seed = 0; // targeted mode: seed of the per-sample target class

    void validate() const {
        detail::require(!epsilons.empty() && !iterations.empty() && !budgets.empty(), "grid lists must be nonempty");
        for (double e : epsilons) detail::require(e > 0, "grid epsilon must be > 0");
        for (auto n : iterations) detail::require(n >= 1, "grid iterations must be >= 1");
    }

    /// Reference search space: 9 epsilons by 6 iteration counts.
    static GridSpec reference(std::vector<std::size_t> budgets) {
        return {{0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5}, {5, 10, 50, 100, 500, 1000}, std::move(budgets)};
    }
};

struct GridCell {
    std::size_t budget = 0;
    double epsilon = 0;
    std::size_t iterations = 0;
    BatchResult batch;
};

inline json grad_config_json(const GradAttackConfig& c) {
    json j;
    j["method"] = "grad";
    j["epsilon"] = c.epsilon;
    j["iterations"] = c.iterations;
    j["budget"] = c.budget;
    j["mode"] = to_string(c.mode);
    return j;
}

namespace detail {

inline AttackResult finish_grad_result(nn::Classifier<float>::Session& session, const PointCloud<float>& x, int y,
                                       int pred_before, AttackMode mode, std::optional<int> target,
                                       const PointCloud<float>& adv) {
    AttackResult r;
    r.true_label = y;
    r.target_class = target;
    r.pred_before = pred_before;
    r.pred_after = session.predict(adv);
    r.success = attack_succeeded(mode, r.pred_before, r.pred_after, target);
    fill_norms(r, x, adv);
    r.adversarial = adv;
    r.adversarial.label = x.label;
    return r;
}

} // namespace detail

/// Success-rate surface over epsilon x iterations for every budget. Each cell
/// equals evaluate_attack_batch with nudge_grad at that configuration; the
/// work is shared because phase one and phase two are prefixes of their
/// longest runs (masks that coincide across iteration counts share one
/// phase-two trajectory).
inline std::vector<GridCell> grid_search(const nn::Classifier<float>& model, const std::vector<Sample>& slice,
                                         const GridSpec& grid, std::size_t jobs = 1) {
    grid.validate();
    detail::require(!slice.empty(), "grid_search: empty slice");
    auto iters = grid.iterations;
    std::sort(iters.begin(), iters.end());
    iters.erase(std::unique(iters.begin(), iters.end()), iters.end());

    // results[budget][eps][iters][sample]
    const std::size_t B = grid.budgets.size(), E = grid.epsilons.size(), I = iters.size(), S = slice.size();
    std::vector<AttackResult> flat(B * E * I * S);
    auto at = [&](std::size_t b, std::size_t e, std::size_t i, std::size_t s) -> AttackResult& {
        return flat[((b * E + e) * I + i) * S + s];
    };

    parallel_for(S, jobs, [&](std::size_t s) {
        const auto& x = *slice[s].cloud;
        const int y = *x.label;
        std::optional<int> target;
        if (grid.mode == AttackMode::targeted)
            target = random_target_class(y, model.classes(), grid.target_seed, slice[s].id);
        const int label = grid.mode == AttackMode::untargeted ? y : *target;
        auto session = model.session();
        const int before = session.predict(x);
        // Phase one does not depend on the budget, so one pass serves every budget.
        std::vector<SelectionMask> scored;
        std::string scan_error;
        try {
            for (auto budget : grid.budgets)
                GradAttackConfig{grid.epsilons[0], iters.back(), budget, grid.mode, target}.validate(x.size(), y);
            scored = locate_vulnerable_points_at<float>(model, x, label, grid.mode, iters, 1);
        } catch (const Error& ex) {
            scan_error = ex.what();
        }
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t budget = grid.budgets[b];
            std::vector<SelectionMask> masks;
            std::string error = scan_error;
            if (error.empty())
                for (const auto& m : scored) masks.push_back(detail::select_top_points(m.scores, budget));
            for (std::size_t e = 0; e < E; ++e) {
                std::vector<bool> done(I, false);
                for (std::size_t i = 0; i < I; ++i) {
                    if (done[i]) continue;
                    if (!error.empty()) {
                        auto& r = at(b, e, i, s);
                        r.true_label = y;
                        r.error = error;
                        continue;
                    }
                    std::vector<std::size_t> group;
                    for (std::size_t j = i; j < I; ++j)
                        if (!done[j] && masks[j].selected == masks[i].selected) group.push_back(j);
                    std::vector<std::size_t> checkpoints;
                    for (auto j : group) checkpoints.push_back(iters[j]);
                    try {
                        auto clouds = masked_sign_descent_at<float>(model, x, label, grid.mode, masks[i].selected,
                                                                    grid.epsilons[e], checkpoints);
                        for (std::size_t g = 0; g < group.size(); ++g)
                            at(b, e, group[g], s) =
                                detail::finish_grad_result(session, x, y, before, grid.mode, target, clouds[g]);
                    } catch (const Error& ex) {
                        for (auto j : group) {
                            auto& r = at(b, e, j, s);
                            r.true_label = y;
                            r.error = ex.what();
                        }
                    }
                    for (auto j : group) {
                        done[j] = true;
                        at(b, e, j, s).sample_id = slice[s].id;
                    }
                }
            }
        }
    });

    std::vector<GridCell> cells;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t e = 0; e < E; ++e)
            for (std::size_t i = 0; i < I; ++i) {
                GridCell c;
                c.budget = grid.budgets[b];
                c.epsilon = grid.epsilons[e];
                c.iterations = iters[i];
                c.batch.results.assign(flat.begin() + static_cast<std::ptrdiff_t>(((b * E + e) * I + i) * S),
                                       flat.begin() + static_cast<std::ptrdiff_t>(((b * E + e) * I + i + 1) * S));
                c.batch.summary = summarize("grad", grad_config_json({c.epsilon, c.iterations, c.budget, grid.mode}),
                                            c.batch.results);
                cells.push_back(std::move(c));
            }
    return cells;
}

/// Best cell of one budget: highest success rate, then lowest adversarial
/// accuracy, then the earliest cell in (epsilon, iterations) order.
inline const GridCell& best_cell(const std::vector<GridCell>& cells, std::size_t budget) {
    const GridCell* best = nullptr;
    for (const auto& c : cells) {
        if (c.budget != budget) continue;
        if (!best || c.batch.summary.success_rate > best->batch.summary.success_rate ||
            (c.batch.summary.success_rate == best->batch.summary.success_rate &&
             c.batch.summary.adv_accuracy < best->batch.summary.adv_accuracy))
            best = &c;
    }
    detail::require(best != nullptr, "no grid cell for budget " + std::to_string(budget));
    return *best;
}

/// A named white-box attacker for defense sweeps.
struct Attacker {
    std::string name;
    GradAttackConfig config;
};

struct DefenseRow {
    std::size_t remove_k = 0;
    double clean_accuracy = 0;
    std::vector<double> success_rate; // per attacker
};

struct DefenseSweep {
    std::vector<std::string> attackers;
    std::vector<DefenseRow> rows; // ascending remove_k, first row remove_k = 0
    std::vector<BatchResult> undefended; // per attacker
};

/// Attacks are crafted once against the undefended model (the defense is
/// blind) and then scored through the point-removal wrapper. Row
/// remove_k = 0 is the undefended baseline. With the defense, an attack
/// succeeds when the defended prediction on the adversarial cloud differs
/// from the defended prediction on the clean cloud.
inline DefenseSweep defense_sweep(const nn::Classifier<float>& model, const std::vector<Sample>& slice,
                                  const std::vector<Attacker>& attackers, std::vector<std::size_t> remove_ks,
                                  std::size_t jobs = 1) {
    detail::require(!slice.empty(), "defense_sweep: empty slice");
    remove_ks.push_back(0);
    std::sort(remove_ks.begin(), remove_ks.end());
    remove_ks.erase(std::unique(remove_ks.begin(), remove_ks.end()), remove_ks.end());
    for (auto k : remove_ks)
        for (const auto& s : slice) detail::require(k < s.cloud->size(), "remove_k must be smaller than P");

    DefenseSweep out;
    for (const auto& a : attackers) {
        out.attackers.push_back(a.name);
        out.undefended.push_back(evaluate_attack_batch(
            slice, [&](const PointCloud<float>& x, int y, std::size_t) { return nudge_grad<float>(model, x, y, a.config); },
            a.name, grad_config_json(a.config), jobs));
    }

    for (auto k : remove_ks) {
        DefenseRow row;
        row.remove_k = k;
        std::vector<int> clean_pred(slice.size());
        parallel_for(slice.size(), jobs, [&](std::size_t i) {
            const auto& x = *slice[i].cloud;
            clean_pred[i] = k == 0 ? model.predict(x) : nn::argmax(defended_predict(model, x, k));
        });
        std::size_t correct = 0;
        for (std::size_t i = 0; i < slice.size(); ++i) correct += clean_pred[i] == *slice[i].cloud->label;
        row.clean_accuracy = static_cast<double>(correct) / static_cast<double>(slice.size());

        for (std::size_t a = 0; a < attackers.size(); ++a) {
            const auto& res = out.undefended[a].results;
            if (k == 0) {
                row.success_rate.push_back(out.undefended[a].summary.success_rate);
                continue;
            }
            std::vector<char> hit(slice.size(), 0);
            parallel_for(slice.size(), jobs, [&](std::size_t i) {
                if (!res[i].error.empty()) return;
                hit[i] = nn::argmax(defended_predict(model, res[i].adversarial, k)) != clean_pred[i];
            });
            row.success_rate.push_back(static_cast<double>(std::count(hit.begin(), hit.end(), 1)) /
                                       static_cast<double>(slice.size()));
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

// ---- serialization -------------------------------------------------------

inline json to_json(const AttackResult& r) {
    json j;
    j["sample_id"] = r.sample_id;
    j["true_label"] = r.true_label;
    j["pred_before"] = r.pred_before;
    j["pred_after"] = r.pred_after;
    j["target_class"] = r.target_class ? json(*r.target_class) : json(nullptr);
    j["success"] = r.success;
    j["l2"] = r.l2;
    j["linf"] = r.linf;
    j["edited"] = r.edited;
    j["queries"] = r.queries;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline AttackResult attack_result_from_json(const json& j) {
    AttackResult r;
    r.sample_id = j.at("sample_id").get<std::size_t>();
    r.true_label = j.at("true_label").get<int>();
    r.pred_before = j.at("pred_before").get<int>();
    r.pred_after = j.at("pred_after").get<int>();
    if (!j.at("target_class").is_null()) r.target_class = j.at("target_class").get<int>();
    r.success = j.at("success").get<bool>();
    r.l2 = j.at("l2").get<double>();
    r.linf = j.at("linf").get<double>();
    r.edited = j.at("edited").get<std::size_t>();
    r.queries = j.at("queries").get<std::size_t>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    return r;
}

inline json to_json(const SummaryReport& s) {
    json j;
    j["attack"] = s.attack;
    j["config"] = s.config;
    j["samples"] = s.samples;
    j["failures"] = s.failures;
    j["adv_accuracy"] = s.adv_accuracy;
    j["success_rate"] = s.success_rate;
    j["initial_error_rate"] = s.initial_error_rate;
    j["mean_l2"] = s.mean_l2;
    j["max_l2"] = s.max_l2;
    j["mean_linf"] = s.mean_linf;
    j["max_linf"] = s.max_linf;
    j["mean_edited"] = s.mean_edited;
    return j;
}

/// Header of the flat summary CSV.
inline std::string summary_csv_header() {
    return "attack,method,mode,budget,epsilon,iterations,pool,samples,failures,adv_accuracy,success_rate,"
           "mean_l2,max_l2,mean_linf,max_linf,mean_edited\n";
}

inline std::string summary_csv_row(const SummaryReport& s) {
    auto field = [&](const char* key) -> std::string {
        if (!s.config.contains(key)) return "";
        const auto& v = s.config.at(key);
        return v.is_string() ? v.get<std::string>() : v.dump();
    };
    auto num = [](double v) { return json(v).dump(); };
    std::ostringstream os;
    os << s.attack << ',' << field("method") << ',' << field("mode") << ',' << field("budget") << ','
       << field("epsilon") << ',' << field("iterations") << ',' << field("pool") << ',' << s.samples << ','
       << s.failures << ',' << num(s.adv_accuracy) << ',' << num(s.success_rate) << ',' << num(s.mean_l2) << ','
       << num(s.max_l2) << ',' << num(s.mean_linf) << ',' << num(s.max_linf) << ',' << num(s.mean_edited) << '\n';
    return os.str();
}

} // namespace nudge
