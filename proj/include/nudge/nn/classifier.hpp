#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "../pointcloud.hpp"
#include "dgcnn.hpp"
#include "params.hpp"
#include "pointnet.hpp"

namespace nudge::nn {

/// Numerically stable softmax.
template <std::floating_point Real>
std::vector<Real> softmax(std::span<const Real> logits) {
    detail::require(!logits.empty(), "softmax of an empty vector");
    const Real m = *std::max_element(logits.begin(), logits.end());
    std::vector<Real> p(logits.size());
    Real sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
    for (auto& v : p) v /= sum;
    return p;
}

/// -log softmax(logits)[label] via log-sum-exp.
template <std::floating_point Real>
Real cross_entropy_loss(std::span<const Real> logits, int label) {
    detail::require(label >= 0 && static_cast<std::size_t>(label) < logits.size(),
                    "cross_entropy_loss: label out of range");
    const Real m = *std::max_element(logits.begin(), logits.end());
    Real sum = 0;
    for (Real z : logits) sum += std::exp(z - m);
    return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

/// Index of the largest entry; ties go to the lowest index.
template <class Vec>
int argmax(const Vec& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <std::floating_point Real>
struct LossGradient {
    Real loss = 0;
    std::vector<Real> logits;
    std::vector<Point3<Real>> gradient; // d loss / d point coordinates
};

/// A trained or initialized point-cloud classifier. Immutable; evaluation
/// methods are safe to call concurrently. Works on any point count.
template <std::floating_point Real>
class Classifier {
public:
    explicit Classifier(ModelParams<Real> params) : params_(std::move(params)), net_(build(params_)) {}

    const ModelParams<Real>& params() const noexcept { return params_; }
    std::size_t classes() const noexcept { return params_.spec.classes; }

    std::vector<Real> logits(const PointCloud<Real>& cloud) const {
        Session s(*this);
        return s.logits(cloud);
    }
    std::vector<Real> probabilities(const PointCloud<Real>& cloud) const {
        return softmax<Real>(logits(cloud));
    }
    int predict(const PointCloud<Real>& cloud) const { return argmax(logits(cloud)); }

    LossGradient<Real> loss_gradient(const PointCloud<Real>& cloud, int label) const {
        Session s(*this);
        return s.loss_gradient(cloud, label);
    }

    /// Adds d(loss)/d(params) for one labelled cloud into `grad` and returns
    /// the loss and logits.
    std::pair<Real, std::vector<Real>> accumulate_param_gradient(const PointCloud<Real>& cloud, int label,
                                                                 ModelParams<Real>& grad) const {
        Session s(*this);
        return s.backprop(cloud, label, false, &grad);
    }

    /// Reusable evaluation context. For mini-PointNet it keeps per-point
    /// features and recomputes only points that moved since the last call,
    /// which makes iterative attacks that edit a few points cheap. Results
    /// are identical to a fresh evaluation. Not thread-safe; use one per
    /// worker.
    class Session {
    public:
        explicit Session(const Classifier& model) : model_(&model) {}

        std::vector<Real> logits(const PointCloud<Real>& cloud) {
            run_forward(cloud);
            return current_logits();
        }
        std::vector<Real> probabilities(const PointCloud<Real>& cloud) { return softmax<Real>(logits(cloud)); }
        int predict(const PointCloud<Real>& cloud) { return argmax(logits(cloud)); }

        LossGradient<Real> loss_gradient(const PointCloud<Real>& cloud, int label) {
            LossGradient<Real> out;
            out.gradient.resize(cloud.size());
            std::span<Real> g(reinterpret_cast<Real*>(out.gradient.data()), 3 * cloud.size());
            auto [loss, logits] = backprop(cloud, label, true, nullptr, g);
            out.loss = loss;
            out.logits = std::move(logits);
            return out;
        }

        std::pair<Real, std::vector<Real>> backprop(const PointCloud<Real>& cloud, int label, bool reuse,
                                                    ModelParams<Real>* param_grad, std::span<Real> input_grad = {}) {
            run_forward(cloud, reuse);
            auto logits = current_logits();
            const Real loss = cross_entropy_loss<Real>(logits, label);
            auto dlogits = softmax<Real>(logits);
            dlogits[static_cast<std::size_t>(label)] -= Real(1);
            std::visit(
                [&](const auto& net) {
                    using Net = std::decay_t<decltype(net)>;
                    if constexpr (std::is_same_v<Net, PointNet<Real>>)
                        net.backward(pn_, dlogits, input_grad, param_grad);
                    else
                        net.backward(dg_, dlogits, input_grad, param_grad);
                },
                model_->net_);
            return {loss, std::move(logits)};
        }

    private:
        void run_forward(const PointCloud<Real>& cloud, bool reuse = true) {
            std::visit(
                [&](const auto& net) {
                    using Net = std::decay_t<decltype(net)>;
                    if constexpr (std::is_same_v<Net, PointNet<Real>>)
                        net.forward(cloud, pn_, reuse);
                    else
                        net.forward(cloud, dg_);
                },
                model_->net_);
        }
        const std::vector<Real>& current_logits() const {
            return model_->params_.spec.arch == Arch::pointnet ? pn_.logits : dg_.logits;
        }

        const Classifier* model_;
        PointNetState<Real> pn_;
        DgcnnState<Real> dg_;
    };

    Session session() const { return Session(*this); }

private:
    static std::variant<PointNet<Real>, Dgcnn<Real>> build(const ModelParams<Real>& p) {
        if (p.spec.arch == Arch::pointnet) return PointNet<Real>(p);
        return Dgcnn<Real>(p);
    }

    ModelParams<Real> params_;
    std::variant<PointNet<Real>, Dgcnn<Real>> net_;
};

} // namespace nudge::nn
