#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "../pointcloud.hpp"
#include "layers.hpp"
#include "params.hpp"

namespace nudge::nn {

/// Activations of one mini-PointNet forward pass.
template <std::floating_point Real>
struct PointNetState {
    std::size_t points = 0;
    std::vector<Real> input;                 // P x 3
    std::vector<std::vector<Real>> features; // per layer, P x width (post-ReLU)
    std::vector<Real> pooled;
    std::vector<std::uint32_t> winner; // argmax point of every pooled channel
    std::vector<Real> hidden;          // head layer (post-ReLU)
    std::vector<Real> logits;
};

/// Mini-PointNet: shared per-point MLP with ReLU, global max-pool, and a
/// ReLU hidden layer followed by a linear classifier. No input transform
/// and no normalization layers.
template <std::floating_point Real>
class PointNet {
public:
    explicit PointNet(const ModelParams<Real>& params) {
        params.validate();
        if (params.spec.arch != Arch::pointnet) throw ModelError("parameters are not a mini-pointnet");
        for (const auto& L : params.spec.layers())
            layers_.emplace_back(L.out, L.in, std::span<const Real>(params.at(L.name + ".weight").data),
                                 std::span<const Real>(params.at(L.name + ".bias").data));
    }

    std::size_t point_layers() const noexcept { return layers_.size() - 2; }
    std::size_t classes() const noexcept { return layers_.back().out; }

    /// Runs the forward pass. With `reuse` set, per-point features already in
    /// `state` are kept for points whose coordinates are bit-identical to the
    /// previous input; the result equals a fresh pass exactly.
    void forward(const PointCloud<Real>& cloud, PointNetState<Real>& state, bool reuse = false) const {
        const std::size_t P = cloud.size();
        if (P == 0) throw InvalidInput("cannot classify an empty cloud");
        const std::size_t L = point_layers();
        const bool can_reuse = reuse && state.points == P && state.features.size() == L;
        if (!can_reuse) {
            state.points = P;
            state.input.assign(3 * P, Real(0));
            state.features.assign(L, {});
            for (std::size_t l = 0; l < L; ++l) state.features[l].assign(P * layers_[l].out, Real(0));
        }
        const auto flat = cloud.flat();
        for (std::size_t p = 0; p < P; ++p) {
            Real* in = state.input.data() + 3 * p;
            if (can_reuse && std::memcmp(in, flat.data() + 3 * p, 3 * sizeof(Real)) == 0) continue;
            std::copy_n(flat.data() + 3 * p, 3, in);
            const Real* x = in;
            for (std::size_t l = 0; l < L; ++l) {
                Real* y = state.features[l].data() + p * layers_[l].out;
                layers_[l].forward(x, y);
                relu_inplace(y, layers_[l].out);
                x = y;
            }
        }

        const std::size_t width = layers_[L - 1].out;
        state.pooled.resize(width);
        state.winner.resize(width);
        max_pool_rows(state.features[L - 1].data(), P, width, state.pooled.data(), state.winner.data());

        const auto& fc1 = layers_[L];
        const auto& fc2 = layers_[L + 1];
        state.hidden.resize(fc1.out);
        fc1.forward(state.pooled.data(), state.hidden.data());
        relu_inplace(state.hidden.data(), fc1.out);
        state.logits.resize(fc2.out);
        fc2.forward(state.hidden.data(), state.logits.data());
    }

    /// Backpropagates d(loss)/d(logits). Writes d(loss)/d(input) into
    /// `input_grad` (P x 3, overwritten) and adds parameter gradients into
    /// `param_grad`; either may be null. Max-pool gradient goes entirely to
    /// the winning point of each channel.
    void backward(const PointNetState<Real>& state, std::span<const Real> dlogits, std::span<Real> input_grad,
                  ModelParams<Real>* param_grad) const {
        const std::size_t L = point_layers();
        const auto& fc1 = layers_[L];
        const auto& fc2 = layers_[L + 1];
        auto grad_ptr = [&](std::size_t layer, bool weight) -> Real* {
            return param_grad ? param_grad->arrays[2 * layer + (weight ? 0 : 1)].second.data.data() : nullptr;
        };

        std::vector<Real> dhidden(fc1.out, Real(0));
        accumulate_dense_grad(dlogits.data(), state.hidden.data(), fc2.out, fc2.in, grad_ptr(L + 1, true),
                              grad_ptr(L + 1, false));
        fc2.backward_input(dlogits.data(), dhidden.data());
        relu_backward(state.hidden.data(), dhidden.data(), fc1.out);
        std::vector<Real> dpooled(fc1.in, Real(0));
        accumulate_dense_grad(dhidden.data(), state.pooled.data(), fc1.out, fc1.in, grad_ptr(L, true),
                              grad_ptr(L, false));
        fc1.backward_input(dhidden.data(), dpooled.data());

        if (!input_grad.empty()) std::fill(input_grad.begin(), input_grad.end(), Real(0));

        // Gather the channels each winning point is responsible for.
        const std::size_t width = layers_[L - 1].out;
        std::vector<std::uint32_t> order(width);
        for (std::size_t c = 0; c < width; ++c) order[c] = static_cast<std::uint32_t>(c);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return state.winner[a] < state.winner[b]; });

        std::size_t max_width = 3;
        for (std::size_t l = 0; l < L; ++l) max_width = std::max(max_width, layers_[l].out);
        std::vector<Real> grad(max_width), grad_prev(max_width);

        for (std::size_t pos = 0; pos < width;) {
            const std::uint32_t p = state.winner[order[pos]];
            std::fill(grad.begin(), grad.begin() + static_cast<std::ptrdiff_t>(width), Real(0));
            for (; pos < width && state.winner[order[pos]] == p; ++pos) grad[order[pos]] = dpooled[order[pos]];

            for (std::size_t l = L; l-- > 0;) {
                const auto& layer = layers_[l];
                relu_backward(state.features[l].data() + p * layer.out, grad.data(), layer.out);
                const Real* x = l == 0 ? state.input.data() + 3 * p : state.features[l - 1].data() + p * layer.in;
                accumulate_dense_grad(grad.data(), x, layer.out, layer.in, grad_ptr(l, true), grad_ptr(l, false));
                if (l == 0 && input_grad.empty()) break;
                std::fill(grad_prev.begin(), grad_prev.begin() + static_cast<std::ptrdiff_t>(layer.in), Real(0));
                layer.backward_input(grad.data(), grad_prev.data());
                std::swap(grad, grad_prev);
            }
            if (!input_grad.empty())
                for (int d = 0; d < 3; ++d) input_grad[3 * p + d] += grad[d];
        }
    }

private:
    std::vector<DenseLayer<Real>> layers_;
};

} // namespace nudge::nn
