#pragma once

// Experiment configuration: one JSON document, paths relative to the working directory.

#include "tailgen/creative/trial.hpp"
#include "tailgen/harness/files.hpp"
#include "tailgen/prior/concept.hpp"
#include "tailgen/prior/train.hpp"

namespace tailgen {

struct ExperimentConfig {
    fs::path concept_spec;
    fs::path prior_checkpoint;
    fs::path baseline;
    fs::path output_dir = "out";
    int pca_k = 8;
    int n_prior = 5000;
    std::uint64_t master_seed = 0;
    std::string trial_label = "trial";
    TrainOptions prior_training{4000};
    LossConfig trial;
    double neg_strength = 0.5;  ///< default alpha for label-negative
};

/// Named substreams of the master seed; each stage can be re-run on its own.
struct StageSeeds {
    std::uint64_t prior_init, prior_data, prior_train, baseline, trial;
};

inline StageSeeds stage_seeds(std::uint64_t master) {
    const std::uint64_t prior = substream(master, "prior-train");
    return {derive_seed(prior, 0), derive_seed(prior, 1), derive_seed(prior, 2), substream(master, "baseline"),
            substream(master, "trial")};
}

inline Json to_json(const ExperimentConfig& c) {
    Json trial = to_json(c.trial);
    trial.erase("space");
    return Json{{"schema_version", kSchemaVersion},
                {"concept_spec", c.concept_spec.generic_string()},
                {"prior_checkpoint", c.prior_checkpoint.generic_string()},
                {"baseline", c.baseline.generic_string()},
                {"output_dir", c.output_dir.generic_string()},
                {"pca_k", c.pca_k},
                {"n_prior", c.n_prior},
                {"master_seed", c.master_seed},
                {"trial_label", c.trial_label},
                {"space", to_string(c.trial.space)},
                {"neg_strength", c.neg_strength},
                {"prior_training",
                 {{"steps", c.prior_training.steps},
                  {"batch_size", c.prior_training.batch_size},
                  {"learning_rate", c.prior_training.optimizer.learning_rate},
                  {"final_lr_fraction", c.prior_training.final_lr_fraction}}},
                {"trial", trial}};
}

/// Parses and validates. The concept spec must exist (its dimension bounds pca_k); the output
/// artifacts may not exist yet.
inline ExperimentConfig experiment_config_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    if (j.value("schema_version", 0) != kSchemaVersion)
        throw ConfigError("unsupported experiment config schema_version (expected " + std::to_string(kSchemaVersion) + ")");
    ExperimentConfig c;
    try {
        c.concept_spec = j.at("concept_spec").get<std::string>();
        c.output_dir = j.value("output_dir", std::string("out"));
        c.prior_checkpoint = j.value("prior_checkpoint", (c.output_dir / "prior.json").string());
        c.baseline = j.value("baseline", (c.output_dir / "baseline.json").string());
        c.pca_k = j.value("pca_k", c.pca_k);
        c.n_prior = j.value("n_prior", c.n_prior);
        c.master_seed = j.value("master_seed", c.master_seed);
        c.trial_label = j.value("trial_label", c.trial_label);
        c.neg_strength = j.value("neg_strength", c.neg_strength);
        if (j.contains("prior_training")) {
            const auto& p = j.at("prior_training");
            c.prior_training.steps = p.value("steps", c.prior_training.steps);
            c.prior_training.batch_size = p.value("batch_size", c.prior_training.batch_size);
            c.prior_training.optimizer.learning_rate = p.value("learning_rate", c.prior_training.optimizer.learning_rate);
            c.prior_training.final_lr_fraction = p.value("final_lr_fraction", c.prior_training.final_lr_fraction);
        }
        Json trial = j.value("trial", Json::object());
        if (j.contains("space")) trial["space"] = j.at("space");
        c.trial = loss_config_from_json(trial);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }

    if (c.trial_label.empty() || c.trial_label.find_first_of("/\\") != std::string::npos)
        throw ConfigError("trial_label must be a nonempty file-name-safe string");
    if (c.prior_training.steps < 0) throw ConfigError("prior_training.steps must be nonnegative");
    if (c.prior_training.batch_size < 1) throw ConfigError("prior_training.batch_size must be positive");
    if (!(c.neg_strength >= 0.0)) throw ConfigError("neg_strength must be nonnegative");
    if (c.pca_k < 1) throw ConfigError("pca_k must be at least 1");
    if (c.n_prior < c.pca_k + 1) throw ConfigError("n_prior must be at least pca_k + 1");
    if (!fs::exists(c.concept_spec)) throw ConfigError("concept spec '" + c.concept_spec.string() + "' does not exist");
    const ConceptSpec spec = concept_spec_from_json(read_json_file(c.concept_spec));
    const auto m = spec.components.empty() ? 0 : spec.components.front().mean.size();
    if (c.pca_k > m) throw ConfigError("pca_k exceeds the embedding dimension " + std::to_string(m));
    return c;
}

/// Moves the output directory; artifact paths that lived under the old one move with it.
inline ExperimentConfig with_output_dir(ExperimentConfig c, const fs::path& dir) {
    for (fs::path* p : {&c.prior_checkpoint, &c.baseline}) {
        const fs::path rel = p->lexically_normal().lexically_relative(c.output_dir.lexically_normal());
        if (!rel.empty() && *rel.begin() != "..") *p = dir / rel;
    }
    c.output_dir = dir;
    return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    return experiment_config_from_json(read_json_file(path));
}

}  // namespace tailgen
