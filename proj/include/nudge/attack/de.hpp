#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "../error.hpp"
#include "../nn/classifier.hpp"
#include "../pointcloud.hpp"
#include "../random.hpp"
#include "result.hpp"

namespace nudge {

/// Grey-box access to a classifier: class probabilities and nothing else.
template <std::floating_point Real>
class ProbabilityOracle {
public:
    virtual ~ProbabilityOracle() = default;
    virtual std::vector<double> probabilities(const PointCloud<Real>& cloud) = 0;
};

/// Oracle backed by a Classifier session.
template <std::floating_point Real>
class ClassifierOracle final : public ProbabilityOracle<Real> {
public:
    explicit ClassifierOracle(const nn::Classifier<Real>& model) : session_(model.session()) {}
    std::vector<double> probabilities(const PointCloud<Real>& cloud) override {
        auto p = session_.probabilities(cloud);
        return {p.begin(), p.end()};
    }

private:
    typename nn::Classifier<Real>::Session session_;
};

/// Oracle backed by any callable returning probabilities.
template <std::floating_point Real>
class FunctionOracle final : public ProbabilityOracle<Real> {
public:
    using Fn = std::function<std::vector<double>(const PointCloud<Real>&)>;
    explicit FunctionOracle(Fn fn) : fn_(std::move(fn)) {}
    std::vector<double> probabilities(const PointCloud<Real>& cloud) override { return fn_(cloud); }

private:
    Fn fn_;
};

/// One edited point: which point moves and its displacement from the
/// original position.
struct CandidateEntry {
    std::size_t index = 0;
    std::array<double, 3> offset{0, 0, 0};

    friend bool operator==(const CandidateEntry&, const CandidateEntry&) = default;
};

using Candidate = std::vector<CandidateEntry>;

struct DEConfig {
    std::size_t pool_size = 100;
    std::size_t budget = 1;
    double crossover_rate = 0.7;
    double mutation_factor = 0.5;
    std::size_t iterations = 10;
    double offset_bound = 0.5;
    AttackMode mode = AttackMode::untargeted;
    std::optional<int> target_class;
    std::uint64_t seed = 0;

    void validate(std::size_t points, std::optional<int> true_label = std::nullopt) const {
        detail::require(pool_size >= 4, "DE pool size must be >= 4");
        detail::require(iterations >= 1, "DE iterations must be >= 1");
        detail::require(budget >= 1 && budget <= points, "DE budget must be in [1, P]");
        detail::require(crossover_rate >= 0 && crossover_rate <= 1, "crossover rate must be in [0, 1]");
        detail::require(std::isfinite(mutation_factor), "mutation factor must be finite");
        detail::require(offset_bound > 0 && std::isfinite(offset_bound), "offset bound must be > 0");
        if (mode == AttackMode::targeted) {
            detail::require(target_class.has_value(), "targeted attack needs a target class");
            detail::require(!true_label || *target_class != *true_label, "target class equals the true label");
        }
    }
};

/// Moves each listed point to original + offset; later entries for the same
/// index overwrite earlier ones.
template <std::floating_point Real>
PointCloud<Real> apply_candidate(const PointCloud<Real>& x, const Candidate& c) {
    PointCloud<Real> out = x;
    for (const auto& e : c) {
        detail::require(e.index < x.size(), "candidate index " + std::to_string(e.index) + " out of range");
        for (int d = 0; d < 3; ++d) {
            detail::require(std::isfinite(e.offset[d]), "candidate offset is not finite");
            out.points[e.index][d] = static_cast<Real>(static_cast<double>(x.points[e.index][d]) + e.offset[d]);
        }
    }
    return out;
}

/// Untargeted: 1 - p(true label). Targeted: p(target). Higher is better.
inline double fitness_from_probabilities(std::span<const double> probs, int y, AttackMode mode,
                                         std::optional<int> target) {
    const auto at = [&](int c) {
        detail::require(c >= 0 && static_cast<std::size_t>(c) < probs.size(), "class index out of range");
        return probs[static_cast<std::size_t>(c)];
    };
    if (mode == AttackMode::untargeted) return 1.0 - at(y);
    detail::require(target.has_value(), "targeted fitness needs a target class");
    return at(*target);
}

template <std::floating_point Real>
double fitness_of(ProbabilityOracle<Real>& oracle, const PointCloud<Real>& x, int y, const Candidate& c,
                  AttackMode mode, std::optional<int> target) {
    const auto probs = oracle.probabilities(apply_candidate(x, c));
    const double f = fitness_from_probabilities(probs, y, mode, target);
    if (!std::isfinite(f)) throw NumericError("fitness is not finite");
    return f;
}

/// Candidate pool with cached fitness values.
struct DEPool {
    std::vector<Candidate> members;
    std::vector<double> fitness;

    /// Highest fitness; ties go to the lowest member index.
    std::size_t best_index() const {
        return static_cast<std::size_t>(std::max_element(fitness.begin(), fitness.end()) - fitness.begin());
    }
};

template <std::floating_point Real>
DEPool init_pool(ProbabilityOracle<Real>& oracle, const PointCloud<Real>& x, int y, const DEConfig& config) {
    DEPool pool;
    Rng rng(derive_seed(config.seed, {0x696e6974ULL}));
    for (std::size_t j = 0; j < config.pool_size; ++j) {
        Candidate c(config.budget);
        for (auto& e : c) {
            e.index = uniform_index(rng, x.size());
            for (auto& o : e.offset) o = uniform(rng, -config.offset_bound, config.offset_bound);
        }
        pool.members.push_back(std::move(c));
    }
    for (const auto& c : pool.members) pool.fitness.push_back(fitness_of(oracle, x, y, c, config.mode, config.target_class));
    return pool;
}

/// One generation. Every member j builds a trial A_best + m (r1 - r2) from
/// two members drawn with replacement, mixes it entry-wise into A[j] with
/// probability CR, and is replaced only if the trial is strictly fitter.
/// Indices are blended as reals, rounded and clamped. Member j draws from
/// its own RNG stream (seed, generation, j), and selection happens after all
/// trials are scored.
template <std::floating_point Real>
DEPool evolve_step(const DEPool& pool, std::size_t best, ProbabilityOracle<Real>& oracle, const PointCloud<Real>& x,
                   int y, const DEConfig& config, std::size_t generation) {
    const std::size_t N = pool.members.size();
    const auto& A_best = pool.members[best];
    const double P_max = static_cast<double>(x.size() - 1);
    std::vector<Candidate> trials(N);
    for (std::size_t j = 0; j < N; ++j) {
        Rng rng(derive_seed(config.seed, {generation, j}));
        const auto& r1 = pool.members[uniform_index(rng, N)];
        const auto& r2 = pool.members[uniform_index(rng, N)];
        const auto& cur = pool.members[j];
        Candidate t(cur.size());
        for (std::size_t e = 0; e < cur.size(); ++e) {
            const bool take = config.crossover_rate > uniform01(rng);
            if (!take) {
                t[e] = cur[e];
                continue;
            }
            const double idx = static_cast<double>(A_best[e].index) +
                               config.mutation_factor * (static_cast<double>(r1[e].index) - static_cast<double>(r2[e].index));
            t[e].index = static_cast<std::size_t>(std::clamp(std::round(idx), 0.0, P_max));
            for (int d = 0; d < 3; ++d)
                t[e].offset[d] = A_best[e].offset[d] + config.mutation_factor * (r1[e].offset[d] - r2[e].offset[d]);
        }
        trials[j] = std::move(t);
    }
    std::vector<double> trial_fitness(N);
    for (std::size_t j = 0; j < N; ++j)
        trial_fitness[j] = fitness_of(oracle, x, y, trials[j], config.mode, config.target_class);

    DEPool next = pool;
    for (std::size_t j = 0; j < N; ++j)
        if (trial_fitness[j] > pool.fitness[j]) {
            next.members[j] = std::move(trials[j]);
            next.fitness[j] = trial_fitness[j];
        }
    return next;
}

struct DERun {
    Candidate best;
    double best_fitness = 0;
    std::vector<double> best_history; // best-of-pool fitness after init and after every generation
    std::size_t queries = 0;          // fitness evaluations
};

/// Runs the evolution. `initial` replaces the random initial pool when given.
template <std::floating_point Real>
DERun run_de(ProbabilityOracle<Real>& oracle, const PointCloud<Real>& x, int y, const DEConfig& config,
             const std::vector<Candidate>* initial = nullptr) {
    config.validate(x.size(), y);
    std::size_t queries = 0;
    FunctionOracle<Real> counted([&](const PointCloud<Real>& c) {
        ++queries;
        return oracle.probabilities(c);
    });

    DEPool pool;
    if (initial) {
        detail::require(initial->size() == config.pool_size, "initial pool size differs from config");
        for (const auto& c : *initial) detail::require(c.size() == config.budget, "initial candidate size differs from budget");
        pool.members = *initial;
        for (const auto& c : pool.members)
            pool.fitness.push_back(fitness_of<Real>(counted, x, y, c, config.mode, config.target_class));
    } else {
        pool = init_pool<Real>(counted, x, y, config);
    }

    DERun run;
    run.best_history.push_back(pool.fitness[pool.best_index()]);
    for (std::size_t g = 1; g <= config.iterations; ++g) {
        pool = evolve_step<Real>(pool, pool.best_index(), counted, x, y, config, g);
        run.best_history.push_back(pool.fitness[pool.best_index()]);
    }
    const auto b = pool.best_index();
    run.best = pool.members[b];
    run.best_fitness = pool.fitness[b];
    run.queries = queries;
    return run;
}

/// Differential-evolution nudge attack through probabilities only.
/// `queries` in the result counts fitness evaluations (pool + one per trial);
/// the two predictions used for reporting are not counted.
template <std::floating_point Real>
AttackResult nudge_de(ProbabilityOracle<Real>& oracle, const PointCloud<Real>& x, int y, const DEConfig& config,
                      DERun* run_out = nullptr) {
    auto run = run_de(oracle, x, y, config);
    const auto adv = apply_candidate(x, run.best);
    AttackResult r;
    r.true_label = y;
    r.target_class = config.target_class;
    r.pred_before = nn::argmax(oracle.probabilities(x));
    r.pred_after = nn::argmax(oracle.probabilities(adv));
    r.success = attack_succeeded(config.mode, r.pred_before, r.pred_after, config.target_class);
    r.queries = run.queries;
    fill_norms(r, x, adv);
    r.adversarial = cloud_cast<float>(adv);
    r.adversarial.label = x.label;
    if (run_out) *run_out = std::move(run);
    return r;
}

template <std::floating_point Real>
AttackResult nudge_de(const nn::Classifier<Real>& model, const PointCloud<Real>& x, int y, const DEConfig& config) {
    ClassifierOracle<Real> oracle(model);
    return nudge_de(oracle, x, y, config);
}

} // namespace nudge
