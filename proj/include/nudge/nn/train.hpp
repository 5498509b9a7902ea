#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../pointcloud.hpp"
#include "../random.hpp"
#include "classifier.hpp"
#include "params.hpp"

namespace nudge::nn {

/// SGD with momentum (v = momentum * v + g; w -= lr * v).
struct TrainConfig {
    std::size_t epochs = 60;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(epochs >= 1, "epochs must be >= 1");
        detail::require(learning_rate >= 0, "learning rate must be >= 0");
        detail::require(batch_size >= 1, "batch size must be >= 1");
        detail::require(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0;
    double train_acc = 0;
    std::optional<double> test_acc;
};

/// Holds parameters and momentum buffers across steps.
class Trainer {
public:
    Trainer(ModelParams<float> params, TrainConfig config)
        : params_(std::move(params)), velocity_(zero_params<float>(params_.spec)), config_(config) {
        params_.validate();
    }

    const ModelParams<float>& params() const noexcept { return params_; }
    const TrainConfig& config() const noexcept { return config_; }

    struct StepResult {
        double mean_loss = 0;
        std::size_t correct = 0;
    };

    /// One momentum step on the mean cross-entropy of `batch`. Gradients are
    /// summed in batch order, so the update is deterministic.
    StepResult step(std::span<const PointCloud<float>* const> batch) {
        detail::require(!batch.empty(), "training step on an empty batch");
        const Classifier<float> model(params_);
        auto grad = zero_params<float>(params_.spec);
        StepResult r;
        double loss_sum = 0;
        for (const auto* cloud : batch) {
            detail::require(cloud->label.has_value(), "training cloud has no label");
            auto [loss, logits] = model.accumulate_param_gradient(*cloud, *cloud->label, grad);
            loss_sum += loss;
            r.correct += argmax(logits) == *cloud->label;
        }
        r.mean_loss = loss_sum / static_cast<double>(batch.size());

        const float inv = 1.0f / static_cast<float>(batch.size());
        const float mu = static_cast<float>(config_.momentum);
        const float lr = static_cast<float>(config_.learning_rate);
        for (std::size_t a = 0; a < params_.arrays.size(); ++a) {
            auto& w = params_.arrays[a].second.data;
            auto& v = velocity_.arrays[a].second.data;
            const auto& g = grad.arrays[a].second.data;
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = mu * v[i] + g[i] * inv;
                w[i] -= lr * v[i];
            }
        }
        for (const auto& [name, t] : params_.arrays)
            for (float x : t.data)
                if (!std::isfinite(x)) throw NumericError("training diverged: non-finite value in " + name);
        return r;
    }

private:
    ModelParams<float> params_;
    ModelParams<float> velocity_;
    TrainConfig config_;
};

/// Fraction of clouds whose top logit is their label. A tie for the top
/// logit counts as incorrect.
template <std::floating_point Real>
double evaluate_accuracy(const Classifier<Real>& model, const std::vector<PointCloud<Real>>& clouds) {
    detail::require(!clouds.empty(), "evaluate_accuracy: empty dataset");
    std::size_t correct = 0;
    auto session = model.session();
    for (const auto& c : clouds) {
        detail::require(c.label.has_value(), "evaluate_accuracy: unlabelled cloud");
        const auto z = session.logits(c);
        const int top = argmax(z);
        const bool tied = std::count(z.begin(), z.end(), z[static_cast<std::size_t>(top)]) > 1;
        correct += !tied && top == *c.label;
    }
    return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

inline double evaluate_accuracy(const Classifier<float>& model, const Dataset& ds) {
    return evaluate_accuracy(model, ds.clouds);
}

struct TrainResult {
    ModelParams<float> params;
    std::vector<EpochLog> log;
};

/// Trains from a seeded initialization. `on_epoch` (optional) observes
/// progress. Train accuracy is the running accuracy of the epoch's forward
/// passes; test accuracy is measured after the epoch when `test` is given.
inline TrainResult train_model(const ArchSpec& spec, const Dataset& train, const TrainConfig& config,
                               const Dataset* test = nullptr,
                               const std::function<void(const EpochLog&)>& on_epoch = {}) {
    config.validate();
    detail::require(config.learning_rate > 0, "train_model: learning rate must be > 0");
    detail::require(train.size() > 0, "train_model: empty dataset");
    train.validate();
    detail::require(train.num_classes() == spec.classes, "train_model: dataset class count differs from model");

    Trainer trainer(init_params<float>(spec, config.seed), config);
    TrainResult result;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, {0x7261696eULL, epoch}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

        double loss_sum = 0;
        std::size_t correct = 0;
        std::vector<const PointCloud<float>*> batch;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
                batch.push_back(&train.clouds[order[i]]);
            auto r = trainer.step(batch);
            loss_sum += r.mean_loss * static_cast<double>(batch.size());
            correct += r.correct;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss = loss_sum / static_cast<double>(train.size());
        entry.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        if (test && test->size() > 0) entry.test_acc = evaluate_accuracy(Classifier<float>(trainer.params()), *test);
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    result.params = trainer.params();
    return result;
}

/// CSV with header "epoch,mean_loss,train_acc,test_acc" (test_acc empty when
/// no test set was used).
inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,mean_loss,train_acc,test_acc\n";
    for (const auto& e : log) {
        os << e.epoch << ',' << e.mean_loss << ',' << e.train_acc << ',';
        if (e.test_acc) os << *e.test_acc;
        os << '\n';
    }
    return os.str();
}

} // namespace nudge::nn
