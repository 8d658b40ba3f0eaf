#pragma once

#include "tailgen/autodiff/parameters.hpp"

#include <cmath>

namespace tailgen {

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::map<std::string, Matrix> first_moment;
    std::map<std::string, Matrix> second_moment;
    long step = 0;
};

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`. Returns the norm after clipping.
inline double clip_gradients(Gradients& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, g] : grads) g *= s;
        return global_norm(grads);
    }
    return norm;
}

/// One AdamW update with bias correction and decoupled weight decay, applied to trainable
/// entries only. Returns false (and leaves everything untouched) if any gradient is non-finite.
inline bool adamw_step(ParameterSet& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg) {
    for (const auto& [name, g] : grads)
        if (!g.allFinite()) return false;

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& entry : params.entries()) {
        if (!entry.trainable) continue;
        auto it = grads.find(entry.name);
        if (it == grads.end()) continue;
        const Matrix& g = it->second;
        if (g.rows() != entry.value.rows() || g.cols() != entry.value.cols())
            throw DimensionError("adamw_step: gradient shape differs for '" + entry.name + "'");

        auto [m_it, m_new] = state.first_moment.try_emplace(entry.name, Matrix::Zero(g.rows(), g.cols()));
        auto [v_it, v_new] = state.second_moment.try_emplace(entry.name, Matrix::Zero(g.rows(), g.cols()));
        Matrix& m = m_it->second;
        Matrix& v = v_it->second;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);

        entry.value *= 1.0 - cfg.learning_rate * cfg.weight_decay;
        entry.value.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    }
    return true;
}

}  // namespace tailgen
