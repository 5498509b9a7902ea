#pragma once

#include <algorithm>
#include <concepts>
#include <span>
#include <vector>

namespace nudge::nn {

/// Fully connected layer y = W x + b with W stored out x in. Keeps a
/// transposed copy so the forward pass runs as contiguous axpy updates.
template <std::floating_point Real>
struct DenseLayer {
    std::size_t out = 0, in = 0;
    std::vector<Real> weight;   // out x in
    std::vector<Real> weight_t; // in x out
    std::vector<Real> bias;

    DenseLayer() = default;
    DenseLayer(std::size_t out_, std::size_t in_, std::span<const Real> w, std::span<const Real> b)
        : out(out_), in(in_), weight(w.begin(), w.end()), weight_t(w.size()), bias(b.begin(), b.end()) {
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t i = 0; i < in; ++i) weight_t[i * out + o] = weight[o * in + i];
    }

    /// y = W x + b
    void forward(const Real* x, Real* y) const {
        std::copy(bias.begin(), bias.end(), y);
        apply(x, y);
    }

    /// y += W x
    void apply(const Real* x, Real* y) const {
        for (std::size_t i = 0; i < in; ++i) {
            const Real xi = x[i];
            if (xi == Real(0)) continue;
            const Real* col = weight_t.data() + i * out;
            for (std::size_t o = 0; o < out; ++o) y[o] += xi * col[o];
        }
    }

    /// dx += W^T dy
    void backward_input(const Real* dy, Real* dx) const {
        for (std::size_t o = 0; o < out; ++o) {
            const Real g = dy[o];
            if (g == Real(0)) continue;
            const Real* row = weight.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) dx[i] += g * row[i];
        }
    }
};

/// dW += dy x^T, db += dy (either gradient pointer may be null).
template <std::floating_point Real>
void accumulate_dense_grad(const Real* dy, const Real* x, std::size_t out, std::size_t in, Real* dW, Real* db) {
    for (std::size_t o = 0; o < out; ++o) {
        const Real g = dy[o];
        if (g == Real(0)) continue;
        if (db) db[o] += g;
        if (dW) {
            Real* row = dW + o * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
        }
    }
}

template <std::floating_point Real>
void relu_inplace(Real* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > Real(0) ? v[i] : Real(0);
}

/// Zeroes entries of `grad` whose activation is not positive.
template <std::floating_point Real>
void relu_backward(const Real* activation, Real* grad, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!(activation[i] > Real(0))) grad[i] = Real(0);
}

/// Column-wise max over rows of an n x width matrix; ties go to the lowest row.
template <std::floating_point Real>
void max_pool_rows(const Real* rows, std::size_t n, std::size_t width, Real* pooled, std::uint32_t* winner) {
    std::copy(rows, rows + width, pooled);
    std::fill(winner, winner + width, 0u);
    for (std::size_t r = 1; r < n; ++r) {
        const Real* row = rows + r * width;
        for (std::size_t c = 0; c < width; ++c)
            if (row[c] > pooled[c]) {
                pooled[c] = row[c];
                winner[c] = static_cast<std::uint32_t>(r);
            }
    }
}

} // namespace nudge::nn
