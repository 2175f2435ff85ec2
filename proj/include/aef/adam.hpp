#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aef/tensor.hpp"

namespace aef {

// Named trainable tensors of a model, in registration order. Order is part of
// the determinism contract (checkpoint layout, optimizer sweep).
template <class T>
struct ParamSet {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    Tensor<T> add(const std::string& name, Tensor<T> t) {
        t.node()->requires_grad = true;
        items.emplace_back(name, t);
        return t;
    }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& [_, t] : items) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : items) std::fill(t.grad().begin(), t.grad().end(), T(0));
    }
};

template <class T>
struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<T>> m, v;  // one pair of moment buffers per parameter

    void init(const ParamSet<T>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& [_, t] : params.items) {
            m.emplace_back(t.data().size(), T(0));
            v.emplace_back(t.data().size(), T(0));
        }
    }
};

struct AdamConfig {
    double lr = 4.8e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update, reading each parameter's grad buffer.
// Aborts on non-finite gradients with the offending parameter named.
template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
    if (state.m.size() != params.items.size()) state.init(params);
    state.step += 1;
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T corr1 = T(1) - std::pow(b1, T(state.step));
    const T corr2 = T(1) - std::pow(b2, T(state.step));
    const T lr = T(cfg.lr), eps = T(cfg.eps);
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
        auto& [name, t] = params.items[pi];
        auto& val = t.data();
        auto& g = t.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (size_t i = 0; i < val.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw ContractError("adam_step: non-finite gradient in '" + name + "' at element " +
                                    std::to_string(i));
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / corr1;
            const T vhat = v[i] / corr2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace aef
