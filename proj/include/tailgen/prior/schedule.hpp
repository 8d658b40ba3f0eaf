#pragma once

#include "tailgen/common.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace tailgen {

/// Forward-process noise levels. alpha_bar[t] = prod_{s<=t} (1 - beta[s]).
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    int train_steps() const { return static_cast<int>(betas.size()); }

    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
        NoiseSchedule s;
        s.betas = std::move(betas);
        double prod = 1.0;
        for (double b : s.betas) {
            if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule betas must lie in (0, 1)");
            s.alphas.push_back(1.0 - b);
            prod *= 1.0 - b;
            s.alpha_bars.push_back(prod);
        }
        return s;
    }

    /// Linearly spaced betas. The defaults put alpha_bar at the last step near 0.03 for T = 100.
    static NoiseSchedule linear(int train_steps = 100, double beta_start = 1e-3, double beta_end = 0.07) {
        if (train_steps < 1) throw ConfigError("noise schedule needs at least one step");
        std::vector<double> b(static_cast<std::size_t>(train_steps));
        for (int t = 0; t < train_steps; ++t) {
            const double f = train_steps == 1 ? 0.0 : static_cast<double>(t) / (train_steps - 1);
            b[static_cast<std::size_t>(t)] = beta_start + f * (beta_end - beta_start);
        }
        return from_betas(std::move(b));
    }

    /// Descending, evenly strided timesteps starting at T-1, e.g. {99, 79, 59, 39, 19} for 5 of 100.
    std::vector<int> sampling_timesteps(int sample_steps) const {
        if (sample_steps < 1) throw ConfigError("sampler needs at least one step");
        if (sample_steps > train_steps()) throw ConfigError("more sampling steps than training steps");
        const int stride = train_steps() / sample_steps;
        std::vector<int> ts;
        for (int j = 0; j < sample_steps; ++j) ts.push_back(train_steps() - 1 - j * stride);
        return ts;
    }
};

/// Sinusoidal timestep features, one column per training step (dim x T).
inline Matrix timestep_table(int train_steps, int dim) {
    if (dim % 2 != 0) throw ConfigError("timestep embedding dimension must be even");
    const int half = dim / 2;
    Matrix table(dim, train_steps);
    for (int t = 0; t < train_steps; ++t) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
            table(2 * i, t) = std::sin(t * freq);
            table(2 * i + 1, t) = std::cos(t * freq);
        }
    }
    return table;
}

}  // namespace tailgen
