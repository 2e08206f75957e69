#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "orthoscore/errors.hpp"

namespace orthoscore {

struct AdamHyper {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;
};

// First/second moment buffers for the flat concatenation of all parameter
// arrays, plus the shared step counter.
template <class T>
struct AdamStateT {
    std::vector<T> m;
    std::vector<T> v;
    int64_t t = 0;
    AdamHyper hyper;

    explicit AdamStateT(int64_t param_count, AdamHyper hp = {})
        : m(static_cast<size_t>(param_count), T(0)),
          v(static_cast<size_t>(param_count), T(0)),
          hyper(hp) {}
};

using AdamState = AdamStateT<float>;

// One bias-corrected Adam update over all parameter arrays. `params[i]` and
// `grads[i]` must pair up, and their total length must match the state.
// Increments state.t exactly once.
template <class T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               AdamStateT<T>& state) {
    if (params.size() != grads.size()) {
        fail(ErrorKind::Shape, "adam_step: " + std::to_string(params.size()) + " parameter arrays vs " +
                                   std::to_string(grads.size()) + " gradient arrays");
    }
    size_t total = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size()) {
            fail(ErrorKind::Shape, "adam_step: array " + std::to_string(i) + " has " +
                                       std::to_string(params[i].size()) + " parameters but " +
                                       std::to_string(grads[i].size()) + " gradients");
        }
        total += params[i].size();
    }
    if (total != state.m.size()) {
        fail(ErrorKind::Shape, "adam_step: state sized for " + std::to_string(state.m.size()) +
                                   " parameters, got " + std::to_string(total));
    }
    state.t += 1;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    const double lr = state.hyper.learning_rate;
    const double eps = state.hyper.epsilon;
    size_t offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        auto g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const double grad = g[j];
            const double m = b1 * state.m[offset + j] + (1.0 - b1) * grad;
            const double v = b2 * state.v[offset + j] + (1.0 - b2) * grad * grad;
            state.m[offset + j] = static_cast<T>(m);
            state.v[offset + j] = static_cast<T>(v);
            const double m_hat = m / corr1;
            const double v_hat = v / corr2;
            p[j] = static_cast<T>(p[j] - lr * m_hat / (std::sqrt(v_hat) + eps));
        }
        offset += p.size();
    }
}

// Single-array convenience overload.
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamStateT<T>& state) {
    const std::span<T> params[] = {param};
    const std::span<const T> grads[] = {grad};
    adam_step<T>(params, grads, state);
}

// Scales all gradient arrays so the global L2 norm does not exceed
// `max_norm`; returns the pre-clip norm.
template <class T>
double clip_global_norm(std::span<const std::span<T>> grads, double max_norm) {
    double sq = 0;
    for (auto g : grads) {
        for (T v : g) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto g : grads) {
            for (T& v : g) {
                v *= factor;
            }
        }
    }
    return norm;
}

} // namespace orthoscore
