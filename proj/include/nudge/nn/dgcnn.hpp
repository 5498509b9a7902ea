#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "../pointcloud.hpp"
#include "layers.hpp"
#include "params.hpp"

namespace nudge::nn {

/// Activations of one edge-convolution block.
template <std::floating_point Real>
struct EdgeBlockState {
    KnnGraph graph;
    std::vector<Real> input;  // P x in
    std::vector<Real> output; // P x out (post-ReLU)
    std::vector<std::uint32_t> best_neighbor; // P x out, argmax neighbor of every channel
};

template <std::floating_point Real>
struct DgcnnState {
    std::size_t points = 0;
    std::vector<EdgeBlockState<Real>> blocks;
    std::vector<Real> pooled;
    std::vector<std::uint32_t> winner;
    std::vector<Real> hidden;
    std::vector<Real> logits;
};

/// Mini-DGCNN. Each block forms edge features [h_i, h_j - h_i] over the k
/// nearest neighbors of h_i (recomputed per block), applies a shared linear
/// layer with ReLU and max-pools over the neighbors. Blocks feed a global
/// max-pool and the same two-layer head as mini-PointNet.
///
/// Since the edge layer is linear before the ReLU,
///   W [h_i, h_j - h_i] = (W_a - W_b) h_i + W_b h_j,
/// and max_j relu(u_i + v_j) = relu(u_i + max_j v_j), so each block costs two
/// per-point matrix products plus a max over neighbors. The neighbor graph
/// is not differentiated.
template <std::floating_point Real>
class Dgcnn {
public:
    explicit Dgcnn(const ModelParams<Real>& params) : k_(params.spec.k) {
        params.validate();
        if (params.spec.arch != Arch::dgcnn) throw ModelError("parameters are not a mini-dgcnn");
        const auto layers = params.spec.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const auto& w = params.at(L.name + ".weight").data;
            const auto& b = params.at(L.name + ".bias").data;
            if (l + 2 < layers.size()) {
                const std::size_t d = L.in / 2;
                std::vector<Real> self(L.out * d), nbr(L.out * d);
                for (std::size_t o = 0; o < L.out; ++o)
                    for (std::size_t i = 0; i < d; ++i) {
                        self[o * d + i] = w[o * L.in + i] - w[o * L.in + d + i];
                        nbr[o * d + i] = w[o * L.in + d + i];
                    }
                self_.emplace_back(L.out, d, std::span<const Real>(self), std::span<const Real>(b));
                neighbor_.emplace_back(L.out, d, std::span<const Real>(nbr), std::span<const Real>(b));
            } else {
                head_.emplace_back(L.out, L.in, std::span<const Real>(w), std::span<const Real>(b));
            }
        }
    }

    std::size_t classes() const noexcept { return head_.back().out; }
    std::size_t k() const noexcept { return k_; }

    void forward(const PointCloud<Real>& cloud, DgcnnState<Real>& state) const {
        const std::size_t P = cloud.size();
        if (P <= k_) throw InvalidInput("mini-dgcnn needs more than k points");
        state.points = P;
        state.blocks.resize(self_.size());
        std::span<const Real> in = cloud.flat();
        for (std::size_t b = 0; b < self_.size(); ++b) {
            auto& blk = state.blocks[b];
            const auto& su = self_[b];
            const auto& nb = neighbor_[b];
            const std::size_t din = su.in, dout = su.out;
            blk.input.assign(in.begin(), in.end());
            blk.graph = knn_rows<Real>(blk.input, din, k_);

            std::vector<Real> v(P * dout);
            for (std::size_t p = 0; p < P; ++p) {
                std::fill_n(v.data() + p * dout, dout, Real(0));
                nb.apply(blk.input.data() + p * din, v.data() + p * dout);
            }
            blk.output.resize(P * dout);
            blk.best_neighbor.resize(P * dout);
            std::vector<Real> best(dout);
            for (std::size_t p = 0; p < P; ++p) {
                const auto nbrs = blk.graph.row(p);
                std::uint32_t* arg = blk.best_neighbor.data() + p * dout;
                std::copy_n(v.data() + nbrs[0] * dout, dout, best.data());
                std::fill_n(arg, dout, nbrs[0]);
                for (std::size_t t = 1; t < nbrs.size(); ++t) {
                    const std::uint32_t j = nbrs[t];
                    const Real* vj = v.data() + j * dout;
                    for (std::size_t c = 0; c < dout; ++c)
                        if (vj[c] > best[c] || (vj[c] == best[c] && j < arg[c])) {
                            best[c] = vj[c];
                            arg[c] = j;
                        }
                }
                Real* out = blk.output.data() + p * dout;
                su.forward(blk.input.data() + p * din, out);
                for (std::size_t c = 0; c < dout; ++c) out[c] += best[c];
                relu_inplace(out, dout);
            }
            in = blk.output;
        }

        const std::size_t width = self_.back().out;
        state.pooled.resize(width);
        state.winner.resize(width);
        max_pool_rows(state.blocks.back().output.data(), P, width, state.pooled.data(), state.winner.data());
        state.hidden.resize(head_[0].out);
        head_[0].forward(state.pooled.data(), state.hidden.data());
        relu_inplace(state.hidden.data(), head_[0].out);
        state.logits.resize(head_[1].out);
        head_[1].forward(state.hidden.data(), state.logits.data());
    }

    void backward(const DgcnnState<Real>& state, std::span<const Real> dlogits, std::span<Real> input_grad,
                  ModelParams<Real>* param_grad) const {
        const std::size_t B = self_.size();
        const std::size_t P = state.points;
        auto grad_ptr = [&](std::size_t layer, bool weight) -> Real* {
            return param_grad ? param_grad->arrays[2 * layer + (weight ? 0 : 1)].second.data.data() : nullptr;
        };

        std::vector<Real> dhidden(head_[0].out, Real(0));
        accumulate_dense_grad(dlogits.data(), state.hidden.data(), head_[1].out, head_[1].in, grad_ptr(B + 1, true),
                              grad_ptr(B + 1, false));
        head_[1].backward_input(dlogits.data(), dhidden.data());
        relu_backward(state.hidden.data(), dhidden.data(), head_[0].out);
        std::vector<Real> dpooled(head_[0].in, Real(0));
        accumulate_dense_grad(dhidden.data(), state.pooled.data(), head_[0].out, head_[0].in, grad_ptr(B, true),
                              grad_ptr(B, false));
        head_[0].backward_input(dhidden.data(), dpooled.data());

        const std::size_t width = self_.back().out;
        std::vector<Real> dout(P * width, Real(0));
        for (std::size_t c = 0; c < width; ++c) dout[state.winner[c] * width + c] += dpooled[c];

        for (std::size_t b = B; b-- > 0;) {
            const auto& blk = state.blocks[b];
            const auto& su = self_[b];
            const auto& nb = neighbor_[b];
            const std::size_t din = su.in, dw = su.out;
            const bool need_input = b > 0 || !input_grad.empty();

            // Split the pre-activation gradient into the self and neighbor terms.
            std::vector<Real> dself(P * dw, Real(0)), dnbr(P * dw, Real(0));
            for (std::size_t p = 0; p < P; ++p) {
                const Real* out = blk.output.data() + p * dw;
                const Real* g = dout.data() + p * dw;
                const std::uint32_t* arg = blk.best_neighbor.data() + p * dw;
                for (std::size_t c = 0; c < dw; ++c) {
                    if (!(out[c] > Real(0)) || g[c] == Real(0)) continue;
                    dself[p * dw + c] += g[c];
                    dnbr[arg[c] * dw + c] += g[c];
                }
            }

            std::vector<Real> din_grad(need_input ? P * din : 0, Real(0));
            Real* dW = grad_ptr(b, true);
            Real* dB = grad_ptr(b, false);
            const std::size_t full_in = 2 * din;
            for (std::size_t p = 0; p < P; ++p) {
                const Real* x = blk.input.data() + p * din;
                const Real* gs = dself.data() + p * dw;
                const Real* gn = dnbr.data() + p * dw;
                if (dW) {
                    // d/dW_a = gs x^T ; d/dW_b = (gn - gs) x^T
                    for (std::size_t o = 0; o < dw; ++o) {
                        const Real a = gs[o], bb = gn[o] - gs[o];
                        if (a == Real(0) && bb == Real(0)) continue;
                        Real* row = dW + o * full_in;
                        for (std::size_t i = 0; i < din; ++i) {
                            row[i] += a * x[i];
                            row[din + i] += bb * x[i];
                        }
                    }
                }
                if (dB)
                    for (std::size_t o = 0; o < dw; ++o) dB[o] += gs[o];
                if (need_input) {
                    su.backward_input(gs, din_grad.data() + p * din);
                    nb.backward_input(gn, din_grad.data() + p * din);
                }
            }
            if (b > 0) {
                dout = std::move(din_grad);
            } else if (!input_grad.empty()) {
                std::copy(din_grad.begin(), din_grad.end(), input_grad.begin());
            }
        }
    }

private:
    std::size_t k_;
    std::vector<DenseLayer<Real>> self_;     // W_a - W_b per block, with the block bias
    std::vector<DenseLayer<Real>> neighbor_; // W_b per block
    std::vector<DenseLayer<Real>> head_;
};

} // namespace nudge::nn
