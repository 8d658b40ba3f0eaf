#pragma once

#include "tailgen/autodiff/adamw.hpp"
#include "tailgen/prior/concept.hpp"
#include "tailgen/prior/denoiser.hpp"
#include "tailgen/prior/schedule.hpp"

#include <numbers>
#include <vector>

namespace tailgen {

class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(int step, const std::string& detail)
        : NumericError("prior training diverged at step " + std::to_string(step) + ": " + detail), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

struct TrainOptions {
    int steps = 2000;
    int batch_size = 64;
    AdamWConfig optimizer{2e-3, 0.9, 0.999, 1e-8, 0.0};
    /// Cosine decay of the learning rate down to this fraction of its initial value.
    double final_lr_fraction = 0.05;
};

struct TrainResult {
    DenoiserNet net;
    std::vector<double> losses;
};

/// Minimizes E ||eps - eps_theta(sqrt(abar_t) e + sqrt(1 - abar_t) eps, t, c)||^2 with AdamW,
/// t uniform over the schedule and e drawn from the concept mixture.
inline TrainResult train_prior(DenoiserNet net, const ConceptDataset& data, const NoiseSchedule& schedule,
                               const Vector& condition, const TrainOptions& opt, std::uint64_t seed) {
    if (opt.steps < 0) throw ConfigError("train_prior: negative step count");
    if (opt.batch_size < 1) throw ConfigError("train_prior: batch size must be positive");
    require_dims(data.dim(), net.dims.ambient, "train_prior data");
    require_dims(condition.size(), net.dims.cond, "train_prior condition");

    TrainResult result;
    result.losses.reserve(static_cast<std::size_t>(opt.steps));
    if (opt.steps == 0) {
        result.net = std::move(net);
        return result;
    }

    net.set_trainable(true);
    const int m = net.dims.ambient;
    const int batch = opt.batch_size;
    const Matrix table = timestep_table(schedule.train_steps(), net.dims.time_embed);

    Graph g;
    const NetNodes nodes = declare_net(g, net, nullptr, 1.0);
    NodeId x_in = g.input("x_t", m, batch);
    NodeId t_in = g.input("temb", net.dims.time_embed, batch);
    NodeId c_in = g.input("cond", net.dims.cond, batch);
    NodeId target = g.input("eps", m, batch);
    NodeId pred = predict_noise(g, nodes, x_in, t_in, c_in);
    NodeId loss = g.scale(g.squared_norm(g.sub(pred, target)), 1.0 / batch);

    const Matrix cond = condition.replicate(1, batch);
    AdamWState state;
    for (int step = 0; step < opt.steps; ++step) {
        CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
        const Matrix clean = data.sample(batch, static_cast<std::uint64_t>(step));
        Matrix temb(net.dims.time_embed, batch);
        Matrix noisy(m, batch);
        Matrix noise = rng.normal_matrix(m, batch);
        for (int j = 0; j < batch; ++j) {
            const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.train_steps())));
            const double abar = schedule.alpha_bars[static_cast<std::size_t>(t)];
            noisy.col(j) = std::sqrt(abar) * clean.col(j) + std::sqrt(1.0 - abar) * noise.col(j);
            temb.col(j) = table.col(t);
        }
        try {
            g.forward({{"x_t", noisy}, {"temb", temb}, {"cond", cond}, {"eps", noise}}, net.params);
        } catch (const GraphError& e) {
            throw TrainingDiverged(step, e.what());
        }
        const double value = g.scalar(loss);
        if (!std::isfinite(value)) throw TrainingDiverged(step, "non-finite loss");
        result.losses.push_back(value);
        const Gradients grads = g.backward(loss, net.params);
        AdamWConfig cfg = opt.optimizer;
        const double progress = opt.steps > 1 ? static_cast<double>(step) / (opt.steps - 1) : 0.0;
        cfg.learning_rate *= opt.final_lr_fraction +
                             (1.0 - opt.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        if (!adamw_step(net.params, grads, state, cfg)) throw TrainingDiverged(step, "non-finite gradient");
    }
    result.net = std::move(net);
    return result;
}

}  // namespace tailgen
