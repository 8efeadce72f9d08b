#pragma once

#include "orthus/param_store.hpp"

#include <cmath>
#include <unordered_map>

namespace orthus {

template <class S>
struct AdamWConfig {
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.99);
    S eps = S(1e-8);
    S weight_decay = S(0);
};

// First/second moment buffers, parallel to the store's entry order, plus the
// global step count. Serialised into checkpoints for bit-exact resume.
template <class S>
struct AdamWState {
    int64_t t = 0;
    std::vector<MatrixX<S>> m, v;

    void match(const ParamStore<S>& store) {
        if (m.size() == store.size()) return;
        if (!m.empty()) fail("optimizer state tracks ", m.size(), " params, store has ", store.size());
        m.reserve(store.size());
        v.reserve(store.size());
        for (const auto& e : store.entries()) {
            m.push_back(MatrixX<S>::Zero(e.value.rows(), e.value.cols()));
            v.push_back(MatrixX<S>::Zero(e.value.rows(), e.value.cols()));
        }
    }
};

template <class S>
using GradMap = std::unordered_map<std::string, MatrixX<S>>;

// Decoupled weight decay AdamW with bias correction. Only trainable entries
// present in grads are updated; entries are visited in store order.
template <class S>
void adamw_step(ParamStore<S>& store, const GradMap<S>& grads, AdamWState<S>& state,
                const AdamWConfig<S>& cfg) {
    state.match(store);
    ++state.t;
    S bc1 = S(1) - std::pow(cfg.beta1, S(state.t));
    S bc2 = S(1) - std::pow(cfg.beta2, S(state.t));
    size_t i = 0;
    for (auto& e : store.entries()) {
        size_t slot = i++;
        if (!e.trainable) continue;
        auto it = grads.find(e.name);
        if (it == grads.end()) continue;
        const MatrixX<S>& g = it->second;
        if (!same_dims(g, e.value))
            throw ShapeError("gradient for " + e.name + " is " + std::to_string(g.rows()) + "x" +
                             std::to_string(g.cols()) + ", parameter is " + std::to_string(e.value.rows()) +
                             "x" + std::to_string(e.value.cols()));
        if (!g.allFinite()) throw TrainError("non-finite gradient for " + e.name);
        MatrixX<S>& m = state.m[slot];
        MatrixX<S>& v = state.v[slot];
        m = cfg.beta1 * m + (S(1) - cfg.beta1) * g;
        v = cfg.beta2 * v + (S(1) - cfg.beta2) * g.cwiseProduct(g);
        MatrixX<S> update = (m / bc1).array() / ((v / bc2).array().sqrt() + cfg.eps);
        e.value -= cfg.lr * (update + cfg.weight_decay * e.value);
    }
}

}  // namespace orthus
