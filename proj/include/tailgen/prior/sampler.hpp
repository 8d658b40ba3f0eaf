#pragma once

// Deterministic DDIM-style reverse pass, unrolled into a differentiable graph.

#include "tailgen/prior/denoiser.hpp"
#include "tailgen/prior/schedule.hpp"

#include <vector>

namespace tailgen {

/// The unrolled sampler for one trajectory. Input "x_T" (m x 1) is the starting noise; parameters
/// are the frozen network weights plus the conceptual space ("token" and optional adapters).
struct SamplerGraph {
    Graph graph;
    NodeId noise;
    NodeId output;
    std::vector<int> timesteps;
    Eigen::Index ambient = 0;
};

/// Appends the sampler to `g` and returns its output node. With `sample_steps` = 1 the output is
/// the single-step clean estimate (x_T - sqrt(1 - abar) eps) / sqrt(abar) at t = T-1.
inline NodeId append_sampler(Graph& g, NodeId noise, const DenoiserNet& net, const NoiseSchedule& schedule,
                             int sample_steps, const ParameterSet& space, double lora_scale,
                             std::vector<int>* timesteps_out = nullptr) {
    const auto ts = schedule.sampling_timesteps(sample_steps);
    if (timesteps_out) *timesteps_out = ts;
    const Matrix table = timestep_table(schedule.train_steps(), net.dims.time_embed);
    const NetNodes nodes = declare_net(g, net, &space, lora_scale);
    const Vector& token = space.get("token");
    require_dims(token.size(), net.dims.cond, "sampler token");
    NodeId cond = g.parameter("token", token.size(), 1);

    NodeId x = noise;
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const int t = ts[j];
        const double abar = schedule.alpha_bars[static_cast<std::size_t>(t)];
        NodeId eps = predict_noise(g, nodes, x, g.timestep_embed(table, {t}), cond);
        NodeId x0 = g.scale(g.sub(x, g.scale(eps, std::sqrt(1.0 - abar))), 1.0 / std::sqrt(abar));
        if (j + 1 == ts.size()) {
            x = x0;
        } else {
            const double abar_prev = schedule.alpha_bars[static_cast<std::size_t>(ts[j + 1])];
            x = g.add(g.scale(x0, std::sqrt(abar_prev)), g.scale(eps, std::sqrt(1.0 - abar_prev)));
        }
    }
    return x;
}

inline SamplerGraph build_sampler(const DenoiserNet& net, const NoiseSchedule& schedule, int sample_steps,
                                  const ParameterSet& space, double lora_scale = 1.0) {
    SamplerGraph s;
    s.ambient = net.dims.ambient;
    s.noise = s.graph.input("x_T", s.ambient, 1);
    s.output = append_sampler(s.graph, s.noise, net, schedule, sample_steps, space, lora_scale, &s.timesteps);
    return s;
}

/// Starting noise for a trajectory seed.
inline Vector trajectory_noise(std::uint64_t noise_seed, Eigen::Index ambient) {
    CounterRng rng(noise_seed);
    return rng.normal_vector(ambient);
}

inline Vector run_sampler(SamplerGraph& s, const DenoiserNet& net, const ParameterSet& space, std::uint64_t noise_seed) {
    s.graph.forward({{"x_T", trajectory_noise(noise_seed, s.ambient)}}, ParameterLookup{&net.params, &space});
    return s.graph.value(s.output).col(0);
}

/// One sample e from the prior under condition `token` and optional adapters.
inline Vector sample_prior(const DenoiserNet& net, const NoiseSchedule& schedule, const Vector& token,
                           const std::vector<LoraAdapter>* adapters, int sample_steps, std::uint64_t noise_seed) {
    const ParameterSet space = make_conceptual_space(
        token, adapters ? *adapters : std::vector<LoraAdapter>{}, adapters ? SpaceSelection::Both : SpaceSelection::Token);
    const double scale = adapters && !adapters->empty() ? adapters->front().scale : 1.0;
    SamplerGraph s = build_sampler(net, schedule, sample_steps, space, scale);
    return run_sampler(s, net, space, noise_seed);
}

/// N samples with seeds derive_seed(base_seed, i), one per column (m x N). Inference only.
inline Matrix sample_prior_batch(const DenoiserNet& net, const NoiseSchedule& schedule, const ParameterSet& space,
                                 double lora_scale, int sample_steps, std::size_t count, std::uint64_t base_seed) {
    if (count < 1) throw ConfigError("sample_prior_batch: need at least one sample");
    SamplerGraph s = build_sampler(net, schedule, sample_steps, space, lora_scale);
    Matrix out(net.dims.ambient, static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i)
        out.col(static_cast<Eigen::Index>(i)) = run_sampler(s, net, space, derive_seed(base_seed, i));
    return out;
}

inline Matrix sample_prior_batch(const DenoiserNet& net, const NoiseSchedule& schedule, const Vector& token,
                                 const std::vector<LoraAdapter>* adapters, int sample_steps, std::size_t count,
                                 std::uint64_t base_seed) {
    const ParameterSet space = make_conceptual_space(
        token, adapters ? *adapters : std::vector<LoraAdapter>{}, adapters ? SpaceSelection::Both : SpaceSelection::Token);
    const double scale = adapters && !adapters->empty() ? adapters->front().scale : 1.0;
    return sample_prior_batch(net, schedule, space, scale, sample_steps, count, base_seed);
}

}  // namespace tailgen
