#pragma once

// The CLI stages as library calls. Each writes its artifacts and returns what it produced; errors
// surface as ConfigError (exit 2) or FitError/NumericError/runtime_error (exit 3).

#include "tailgen/creative/trial.hpp"
#include "tailgen/harness/artifacts.hpp"
#include "tailgen/harness/config.hpp"
#include "tailgen/harness/report.hpp"

#include <memory>
#include <optional>
#include <ostream>

namespace tailgen {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitOracle = 4 };

inline int exit_code_for(Termination t) {
    switch (t) {
        case Termination::OracleRejected: return kExitOracle;
        case Termination::Diverged: return kExitRuntime;
        default: return kExitOk;
    }
}

struct TrainPriorResult {
    PriorCheckpoint checkpoint;
    std::string digest;
    std::vector<double> losses;
};

inline TrainPriorResult cmd_train_prior(const ExperimentConfig& cfg, std::ostream& log) {
    const ConceptSpec spec = concept_spec_from_json(read_json_file(cfg.concept_spec));
    const StageSeeds seeds = stage_seeds(cfg.master_seed);
    const ConceptDataset data(spec, seeds.prior_data);

    DenoiserDims dims;
    dims.ambient = static_cast<int>(data.dim());
    dims.cond = static_cast<int>(data.token().size());
    const NoiseSchedule schedule = NoiseSchedule::linear();

    TrainResult trained = train_prior(DenoiserNet::init(dims, seeds.prior_init), data, schedule, data.token(),
                                      cfg.prior_training, seeds.prior_train);
    TrainPriorResult out;
    out.checkpoint = {std::move(trained.net), schedule, spec, data.token(), seeds.prior_data, cfg.prior_training.steps};
    out.losses = std::move(trained.losses);

    write_json_file(cfg.prior_checkpoint, to_json(out.checkpoint));
    std::ostringstream csv;
    CsvWriter w(csv);
    w.row({"step", "loss"});
    for (std::size_t i = 0; i < out.losses.size(); ++i) w.row({std::to_string(i), format_double(out.losses[i])});
    write_text_file(cfg.output_dir / "prior_loss.csv", csv.str());

    out.digest = file_digest(cfg.prior_checkpoint);
    log << "prior checkpoint " << cfg.prior_checkpoint.string() << " (" << out.digest << ")\n";
    if (!out.losses.empty()) log << "final training loss " << out.losses.back() << "\n";
    return out;
}

inline BaselineArtifact cmd_sample_baseline(const ExperimentConfig& cfg, std::ostream& log) {
    const PriorCheckpoint ck = load_checkpoint(cfg.prior_checkpoint);
    BaselineArtifact b;
    b.sample_steps = cfg.trial.sample_steps;
    b.checkpoint_digest = file_digest(cfg.prior_checkpoint);
    b.samples = sample_prior_batch(ck.net, ck.schedule, ck.token, nullptr, b.sample_steps,
                                   static_cast<std::size_t>(cfg.n_prior), stage_seeds(cfg.master_seed).baseline);
    b.pca = fit_pca(b.samples, cfg.pca_k);
    b.gaussian = fit_gaussian(b.reduced(), false);
    write_json_file(cfg.baseline, to_json(b));
    log << "baseline " << cfg.baseline.string() << ": " << cfg.n_prior << " samples, k=" << cfg.pca_k
        << ", explained variance total " << b.pca.explained_variance_total() << "\n";
    return b;
}

/// Everything a trial needs, loaded from the checkpoint and baseline artifacts. Not movable: the
/// oracle and the trial setup hold pointers into it.
class TrialContext {
public:
    TrialContext(PriorCheckpoint ck, BaselineArtifact base)
        : checkpoint(std::move(ck)),
          baseline(std::move(base)),
          reduced(baseline.pca.project_columns(baseline.samples)),
          concept_data(checkpoint.concept_spec, checkpoint.concept_seed),
          oracle(concept_data) {
        require_dims(baseline.pca.ambient_dim(), checkpoint.net.dims.ambient, "baseline vs checkpoint");
    }
    TrialContext(const TrialContext&) = delete;
    TrialContext& operator=(const TrialContext&) = delete;

    static std::shared_ptr<TrialContext> load(const ExperimentConfig& cfg) {
        PriorCheckpoint ck = load_checkpoint(cfg.prior_checkpoint);
        BaselineArtifact base = load_baseline(cfg.baseline);
        if (!base.checkpoint_digest.empty() && base.checkpoint_digest != file_digest(cfg.prior_checkpoint))
            throw ConfigError("baseline was sampled from a different prior checkpoint; rerun sample-baseline");
        return std::make_shared<TrialContext>(std::move(ck), std::move(base));
    }

    TrialSetup setup(std::string label) const {
        TrialSetup s;
        s.net = &checkpoint.net;
        s.schedule = &checkpoint.schedule;
        s.pca = &baseline.pca;
        s.baseline = &baseline.gaussian;
        s.baseline_reduced = &reduced;
        s.oracle = &oracle;
        s.anchor = concept_data.anchor();
        s.base_token = checkpoint.token;
        s.label = std::move(label);
        return s;
    }

    const PriorCheckpoint checkpoint;
    const BaselineArtifact baseline;
    const Matrix reduced;
    const ConceptDataset concept_data;
    const ConceptRegionOracle oracle;
};

struct TrialRunOptions {
    std::optional<fs::path> negative;  ///< negative_cluster_set file to add
    std::optional<fs::path> resume;    ///< trial record whose final parameters seed this run
    std::optional<std::string> label;
    std::optional<std::uint64_t> trial_seed;
};

struct TrialRunResult {
    TrialRecord record;
    fs::path record_path;
    fs::path csv_path;
    int exit_code = kExitOk;
};

/// Clusters in force at the end of a record: the initial set plus any added by commands.
inline NegativeClusterSet final_clusters(const TrialRecord& r) {
    NegativeClusterSet out = r.initial_clusters;
    for (const auto& c : r.commands)
        if (c.command.type == TrialCommand::Type::AddNegativeCluster) out.push_back(c.command.cluster);
    return out;
}

inline void write_trial_outputs(const TrialRecord& rec, const fs::path& record_path, const fs::path& csv_path) {
    write_json_file(record_path, to_json(rec));
    std::ostringstream csv;
    write_trajectory_csv(rec, csv);
    write_text_file(csv_path, csv.str());
}

inline TrialRunResult cmd_run_trial(const ExperimentConfig& cfg, const TrialRunOptions& opt, std::ostream& log) {
    const auto ctx = TrialContext::load(cfg);
    const std::string label = opt.label.value_or(opt.resume ? cfg.trial_label + "-resumed" : cfg.trial_label);
    if (label.empty() || label.find_first_of("/\\") != std::string::npos) throw ConfigError("invalid trial label");

    Json references{{"prior_checkpoint", {{"path", cfg.prior_checkpoint.generic_string()}, {"digest", file_digest(cfg.prior_checkpoint)}}},
                    {"baseline", {{"path", cfg.baseline.generic_string()}, {"digest", file_digest(cfg.baseline)}}}};
    NegativeClusterSet clusters;
    std::optional<ParameterSet> resume_params;
    if (opt.resume) {
        const TrialRecord prev = trial_record_from_json(read_json_file(*opt.resume));
        clusters = final_clusters(prev);
        resume_params = prev.final_parameters;
        references["resumed_from"] = {{"path", opt.resume->generic_string()}, {"digest", file_digest(*opt.resume)}};
    }
    if (opt.negative) {
        for (auto& c : negative_cluster_set_from_json(read_json_file(*opt.negative))) {
            require_dims(c.density.dim(), ctx->baseline.pca.reduced_dim(), "negative cluster");
            clusters.push_back(std::move(c));
        }
        references["negative_clusters"] = {{"path", opt.negative->generic_string()}, {"digest", file_digest(*opt.negative)}};
    }

    const std::uint64_t seed = opt.trial_seed.value_or(stage_seeds(cfg.master_seed).trial);
    TrialRunResult out;
    out.record = run_trial(ctx->setup(label), cfg.trial, clusters, seed, nullptr, nullptr,
                           resume_params ? &*resume_params : nullptr);
    out.record.references = references;
    out.record_path = cfg.output_dir / (label + ".json");
    out.csv_path = cfg.output_dir / (label + ".trajectory.csv");
    write_trial_outputs(out.record, out.record_path, out.csv_path);
    out.exit_code = exit_code_for(out.record.termination);

    log << "trial " << label << ": " << to_string(out.record.termination);
    if (!out.record.termination_detail.empty()) log << " (" << out.record.termination_detail << ")";
    log << " after " << out.record.rows.size() << " iterations\n";
    if (!out.record.snapshots.empty()) {
        const auto& s = out.record.snapshots.back();
        log << "final snapshot @" << s.iteration << ": median percentile " << s.stats.median_percentile
            << ", mean mahalanobis " << s.stats.mean_mahalanobis << ", beyond 3 sigma " << s.stats.frac_beyond_3sigma << "\n";
    }
    log << "record " << out.record_path.string() << "\n";
    return out;
}

struct LabelOptions {
    std::optional<std::size_t> snapshot;  ///< index into the record's snapshots; default last
    std::vector<Eigen::Index> sample_ids; ///< columns of that snapshot; empty = all
    double strength = 0.5;
    fs::path out;
};

/// Fits one negative cluster from a recorded snapshot and writes it as a one-entry cluster set.
inline NegativeClusterSet cmd_label_negative(const fs::path& record_path, const LabelOptions& opt, std::ostream& log) {
    const TrialRecord rec = trial_record_from_json(read_json_file(record_path));
    if (rec.snapshots.empty()) throw ConfigError("record has no snapshots to label");
    const std::size_t idx = opt.snapshot.value_or(rec.snapshots.size() - 1);
    if (idx >= rec.snapshots.size())
        throw ConfigError("snapshot index " + std::to_string(idx) + " out of range (record has " +
                          std::to_string(rec.snapshots.size()) + ")");
    const Snapshot& snap = rec.snapshots[idx];

    Matrix selected;
    if (opt.sample_ids.empty()) {
        selected = snap.reduced;
    } else {
        selected.resize(snap.reduced.rows(), static_cast<Eigen::Index>(opt.sample_ids.size()));
        for (std::size_t i = 0; i < opt.sample_ids.size(); ++i) {
            const auto id = opt.sample_ids[i];
            if (id < 0 || id >= snap.reduced.cols())
                throw ConfigError("sample id " + std::to_string(id) + " out of range");
            selected.col(static_cast<Eigen::Index>(i)) = snap.reduced.col(id);
        }
    }
    const std::string id = rec.label + "@" + std::to_string(snap.iteration);
    NegativeClusterSet set{fit_negative_cluster_reduced(selected, opt.strength, id)};
    write_json_file(opt.out, to_json(set));
    log << "negative cluster " << id << " from " << selected.cols() << " samples -> " << opt.out.string() << "\n";
    return set;
}

inline void cmd_report(const std::vector<fs::path>& records, const fs::path& out_dir, std::ostream& log) {
    std::vector<TrialRecord> loaded;
    for (const auto& p : records) loaded.push_back(trial_record_from_json(read_json_file(p)));
    const auto written = write_report(loaded, out_dir);
    for (const auto& f : written) log << f.string() << "\n";
}

}  // namespace tailgen
