#pragma once

// The creative-optimization loop: sample through the unrolled prior, score the sample under the
// baseline, switch between the creative and anchor objectives, step AdamW, consult the validity
// oracle, and keep periodic distribution snapshots.

#include "tailgen/autodiff/adamw.hpp"
#include "tailgen/creative/commands.hpp"
#include "tailgen/creative/losses.hpp"
#include "tailgen/creative/oracle.hpp"
#include "tailgen/creative/record.hpp"
#include "tailgen/density/gaussian.hpp"
#include "tailgen/density/pca.hpp"
#include "tailgen/prior/sampler.hpp"

#include <limits>

namespace tailgen {

struct LossConfig {
    double anchor_threshold = 0.3;
    bool anchor_enabled = true;
    bool oracle_enabled = true;
    NegativeMode neg_mode = NegativeMode::Repulsive;
    double grad_clip_norm = 1.0;
    int checker_interval = 25;
    int max_steps = 1000;
    AdamWConfig optimizer{1e-4, 0.9, 0.999, 1e-8, 0.01};
    int pullback_cap = 200;
    int snapshot_interval = 100;
    int snapshot_size = 256;
    SpaceSelection space = SpaceSelection::Both;
    int lora_rank = 10;
    double lora_scale = 1.0;
    int sample_steps = 5;

    void validate() const {
        if (anchor_enabled && !(anchor_threshold > 0.0 && anchor_threshold < 2.0))
            throw ConfigError("anchor_threshold must lie in (0, 2)");
        if (checker_interval < 1) throw ConfigError("checker_interval must be at least 1");
        if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
        if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
        if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (optimizer.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
        if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
            throw ConfigError("AdamW betas must lie in [0, 1)");
        if (pullback_cap < 1) throw ConfigError("pullback_cap must be at least 1");
        if (snapshot_interval < 1) throw ConfigError("snapshot_interval must be at least 1");
        if (snapshot_size < 1) throw ConfigError("snapshot_size must be at least 1");
        if (lora_rank < 1) throw ConfigError("lora_rank must be at least 1");
        if (sample_steps < 1) throw ConfigError("sample_steps must be at least 1");
    }
};

inline Json to_json(const LossConfig& c) {
    return Json{{"anchor_threshold", c.anchor_threshold},
                {"anchor_enabled", c.anchor_enabled},
                {"oracle_enabled", c.oracle_enabled},
                {"neg_mode", to_string(c.neg_mode)},
                {"grad_clip_norm", c.grad_clip_norm},
                {"checker_interval", c.checker_interval},
                {"max_steps", c.max_steps},
                {"learning_rate", c.optimizer.learning_rate},
                {"beta1", c.optimizer.beta1},
                {"beta2", c.optimizer.beta2},
                {"adam_eps", c.optimizer.eps},
                {"weight_decay", c.optimizer.weight_decay},
                {"pullback_cap", c.pullback_cap},
                {"snapshot_interval", c.snapshot_interval},
                {"snapshot_size", c.snapshot_size},
                {"space", to_string(c.space)},
                {"lora_rank", c.lora_rank},
                {"lora_scale", c.lora_scale},
                {"sample_steps", c.sample_steps}};
}

/// Missing keys keep their defaults.
inline LossConfig loss_config_from_json(const Json& j, LossConfig c = {}) {
    if (!j.is_object()) throw ConfigError("trial config must be a JSON object");
    try {
        c.anchor_threshold = j.value("anchor_threshold", c.anchor_threshold);
        c.anchor_enabled = j.value("anchor_enabled", c.anchor_enabled);
        c.oracle_enabled = j.value("oracle_enabled", c.oracle_enabled);
        if (j.contains("neg_mode")) c.neg_mode = negative_mode_from_string(j.at("neg_mode").get<std::string>());
        c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
        c.checker_interval = j.value("checker_interval", c.checker_interval);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
        c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
        c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
        c.optimizer.eps = j.value("adam_eps", c.optimizer.eps);
        c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
        c.pullback_cap = j.value("pullback_cap", c.pullback_cap);
        c.snapshot_interval = j.value("snapshot_interval", c.snapshot_interval);
        c.snapshot_size = j.value("snapshot_size", c.snapshot_size);
        if (j.contains("space")) c.space = space_from_string(j.at("space").get<std::string>());
        c.lora_rank = j.value("lora_rank", c.lora_rank);
        c.lora_scale = j.value("lora_scale", c.lora_scale);
        c.sample_steps = j.value("sample_steps", c.sample_steps);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid trial config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Read-only models a trial runs against. All pointers must outlive the trial.
struct TrialSetup {
    const DenoiserNet* net = nullptr;
    const NoiseSchedule* schedule = nullptr;
    const PcaModel* pca = nullptr;
    const GaussianDensity* baseline = nullptr;
    const Matrix* baseline_reduced = nullptr;  ///< reference set for percentiles (k x N)
    const ValidityOracle* oracle = nullptr;
    Vector anchor;
    Vector base_token;
    std::string label = "trial";
};

class TrialObserver {
public:
    virtual ~TrialObserver() = default;
    virtual void on_iteration(const IterationRow&, const Vector& /*reduced*/) {}
    virtual void on_snapshot(const Snapshot&) {}
    virtual void on_command(const RecordedCommand&) {}
};

/// Graph for one trial: unrolled sampler followed by projection and all three losses.
struct TrialGraph {
    Graph graph;
    NodeId noise, sample, reduced, creative, anchor, negative, creative_total;
};

inline TrialGraph build_trial_graph(const TrialSetup& setup, const LossConfig& cfg, const ParameterSet& space,
                                    const NegativeClusterSet& clusters) {
    TrialGraph t;
    Graph& g = t.graph;
    t.noise = g.input("x_T", setup.net->dims.ambient, 1);
    t.sample = append_sampler(g, t.noise, *setup.net, *setup.schedule, cfg.sample_steps, space, cfg.lora_scale);
    t.reduced = project_node(g, t.sample, *setup.pca);
    t.creative = gaussian_log_pdf_node(g, t.reduced, *setup.baseline);
    t.anchor = anchor_loss_node(g, t.sample, setup.anchor);
    t.negative = negative_loss_node(g, t.reduced, clusters, cfg.neg_mode);
    t.creative_total = g.add(t.creative, t.negative);
    return t;
}

/// Initial conceptual space: the base token and freshly initialized adapters (B = 0).
inline ParameterSet initial_space(const TrialSetup& setup, const LossConfig& cfg, std::uint64_t seed) {
    std::vector<LoraAdapter> adapters;
    if (cfg.space != SpaceSelection::Token)
        adapters = init_adapters(*setup.net, {cfg.lora_rank, cfg.lora_scale}, substream(seed, "lora-init"));
    return make_conceptual_space(setup.base_token, adapters, cfg.space);
}

inline std::string trial_config_hash(const LossConfig& cfg, std::uint64_t seed, const NegativeClusterSet& clusters,
                                     const Vector& anchor) {
    return hex64(json_digest(Json{{"config", to_json(cfg)},
                                  {"seed", seed},
                                  {"clusters", to_json(clusters)},
                                  {"anchor", tensor_to_json(anchor)}}));
}

/// Runs one trial. `resume_from`, when given, replaces the freshly initialized conceptual space.
inline TrialRecord run_trial(const TrialSetup& setup, const LossConfig& cfg, NegativeClusterSet clusters,
                             std::uint64_t seed, CommandSource* commands = nullptr, TrialObserver* observer = nullptr,
                             const ParameterSet* resume_from = nullptr) {
    cfg.validate();
    if (!setup.net || !setup.schedule || !setup.pca || !setup.baseline || !setup.baseline_reduced || !setup.oracle)
        throw ConfigError("run_trial: incomplete setup");
    require_dims(setup.pca->reduced_dim(), setup.baseline->dim(), "run_trial baseline");
    require_dims(setup.pca->ambient_dim(), setup.net->dims.ambient, "run_trial pca");

    TrialRecord rec;
    rec.label = setup.label;
    rec.seed = seed;
    rec.config = to_json(cfg);
    rec.config_hash = trial_config_hash(cfg, seed, clusters, setup.anchor);
    rec.initial_clusters = clusters;

    ParameterSet space = initial_space(setup, cfg, seed);
    if (resume_from) {
        for (const auto& e : space.entries()) {
            if (!resume_from->contains(e.name)) throw ConfigError("resume parameters lack '" + e.name + "'");
            space.set(e.name, resume_from->get(e.name));
        }
    }
    if (cfg.max_steps == 0) {
        rec.final_parameters = space;
        return rec;
    }

    const ParameterSet& frozen = setup.net->params;
    const PercentileTable table(*setup.baseline, *setup.baseline_reduced);
    TrialGraph tg = build_trial_graph(setup, cfg, space, clusters);
    AdamWState opt_state;

    const std::uint64_t noise_stream = substream(seed, "trial-noise");
    const std::uint64_t snap_stream = substream(seed, "snapshots");
    const std::uint64_t validity_stream = substream(seed, "validity");
    std::uint64_t draw = 0;
    std::uint64_t current_seed = derive_seed(noise_stream, draw);
    int consecutive_anchor = 0;
    const Eigen::Index m = setup.net->dims.ambient;

    auto take_snapshot = [&](int iteration) {
        Snapshot snap;
        snap.iteration = iteration;
        snap.reduced.resize(setup.pca->reduced_dim(), cfg.snapshot_size);
        for (int j = 0; j < cfg.snapshot_size; ++j) {
            const Vector x = trajectory_noise(derive_seed(snap_stream, static_cast<std::uint64_t>(j)), m);
            tg.graph.forward({{"x_T", x}}, ParameterLookup{&frozen, &space});
            snap.reduced.col(j) = tg.graph.value(tg.reduced).col(0);
        }
        snap.stats = snapshot_stats(snap.reduced, *setup.baseline, [&](double ld) { return table.percentile_of(ld); });
        rec.snapshots.push_back(std::move(snap));
        if (observer) observer->on_snapshot(rec.snapshots.back());
    };
    auto snapshot_if_new = [&](int iteration) {
        if (rec.snapshots.empty() || rec.snapshots.back().iteration != iteration) take_snapshot(iteration);
    };

    int it = 0;
    bool terminated = false;
    auto terminate = [&](Termination reason, std::string detail) {
        rec.termination = reason;
        rec.termination_detail = std::move(detail);
        terminated = true;
    };

    try {
        for (; it < cfg.max_steps && !terminated; ++it) {
            if (commands) {
                bool rebuild = false;
                for (auto& cmd : commands->poll(it)) {
                    RecordedCommand logged{it, cmd};
                    rec.commands.push_back(logged);
                    if (observer) observer->on_command(logged);
                    if (cmd.type == TrialCommand::Type::Stop) {
                        terminate(Termination::StoppedByUser, "stop requested");
                        break;
                    }
                    clusters.push_back(std::move(cmd.cluster));
                    rebuild = true;
                }
                if (terminated) break;
                if (rebuild) tg = build_trial_graph(setup, cfg, space, clusters);
            }

            if (it % cfg.snapshot_interval == 0) take_snapshot(it);

            // The oracle judges its own fresh draw from the current parameters, not the working
            // sample: that one may be an outlier the anchor branch is still pulling back.
            Validity validity = Validity::Skipped;
            Vector checked;
            if (cfg.oracle_enabled && it % cfg.checker_interval == 0) {
                tg.graph.forward({{"x_T", trajectory_noise(derive_seed(validity_stream, static_cast<std::uint64_t>(it)), m)}},
                                 ParameterLookup{&frozen, &space});
                checked = tg.graph.value(tg.sample).col(0);
                validity = validity_check(*setup.oracle, checked, it, cfg.checker_interval);
            }

            tg.graph.forward({{"x_T", trajectory_noise(current_seed, m)}}, ParameterLookup{&frozen, &space});
            IterationRow row;
            row.iteration = it;
            row.seed = current_seed;
            row.creative_loss = tg.graph.scalar(tg.creative);
            row.anchor_loss = tg.graph.scalar(tg.anchor);
            row.neg_loss = tg.graph.scalar(tg.negative);
            if (!std::isfinite(row.creative_loss) || !std::isfinite(row.anchor_loss) || !std::isfinite(row.neg_loss)) {
                terminate(Termination::Diverged, "non-finite loss at iteration " + std::to_string(it));
                break;
            }
            const auto [branch, policy] = cfg.anchor_enabled
                                              ? dynamic_loss_select(row.anchor_loss, cfg.anchor_threshold)
                                              : std::pair{Branch::Creative, SeedPolicy::NewSeed};
            row.branch = branch;
            const Vector reduced = tg.graph.value(tg.reduced).col(0);
            row.validity = validity;

            if (row.validity == Validity::Fail) {
                rec.rows.push_back(row);
                if (observer) observer->on_iteration(row, reduced);
                terminate(Termination::OracleRejected, "validity oracle rejected the sample at iteration " + std::to_string(it));
                break;
            }

            const NodeId objective = branch == Branch::Creative ? tg.creative_total : tg.anchor;
            const Gradients all = tg.graph.backward(objective, ParameterLookup{&frozen, &space});
            Gradients grads;
            for (const auto& e : space.entries())
                if (e.trainable) grads.emplace(e.name, all.at(e.name));
            row.grad_norm = clip_gradients(grads, cfg.grad_clip_norm);
            row.step_applied = adamw_step(space, grads, opt_state, cfg.optimizer);
            if (!row.step_applied) row.grad_norm = 0.0;
            rec.rows.push_back(row);
            if (observer) observer->on_iteration(row, reduced);

            if (branch == Branch::Anchor) {
                if (++consecutive_anchor >= cfg.pullback_cap) {
                    terminate(Termination::Diverged, "anchor pull-back did not converge within " +
                                                         std::to_string(cfg.pullback_cap) + " steps");
                    ++it;
                    break;
                }
            } else {
                consecutive_anchor = 0;
                const std::uint64_t previous = current_seed;
                do {
                    current_seed = derive_seed(noise_stream, ++draw);
                } while (current_seed == previous);
            }
        }
        if (!terminated) terminate(Termination::Completed, "");
        snapshot_if_new(it);
    } catch (const GraphError& e) {
        terminate(Termination::Diverged, e.what());
    } catch (const NumericError& e) {
        terminate(Termination::Diverged, e.what());
    }

    rec.final_parameters = space;
    return rec;
}

}  // namespace tailgen
