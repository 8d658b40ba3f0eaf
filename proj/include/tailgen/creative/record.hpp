#pragma once

#include "tailgen/autodiff/parameters.hpp"
#include "tailgen/creative/commands.hpp"
#include "tailgen/creative/losses.hpp"
#include "tailgen/creative/oracle.hpp"
#include "tailgen/csv.hpp"

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

namespace tailgen {

enum class Termination { Completed, OracleRejected, Diverged, StoppedByUser };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::Completed: return "completed";
        case Termination::OracleRejected: return "oracle_rejected";
        case Termination::Diverged: return "diverged";
        case Termination::StoppedByUser: return "stopped_by_user";
    }
    return "?";
}

inline Termination termination_from_string(const std::string& s) {
    if (s == "completed") return Termination::Completed;
    if (s == "oracle_rejected") return Termination::OracleRejected;
    if (s == "diverged") return Termination::Diverged;
    if (s == "stopped_by_user") return Termination::StoppedByUser;
    throw ConfigError("unknown termination reason '" + s + "'");
}

struct IterationRow {
    int iteration = 0;
    std::uint64_t seed = 0;
    Branch branch = Branch::Creative;
    double creative_loss = 0.0;
    double anchor_loss = 0.0;
    double neg_loss = 0.0;
    double grad_norm = 0.0;  ///< after clipping
    Validity validity = Validity::Skipped;
    bool step_applied = false;
};

struct SnapshotStats {
    double median_percentile = 0.0;
    double mean_mahalanobis = 0.0;
    double frac_beyond_3sigma = 0.0;
};

/// N inference samples (reduced, k x N) drawn with the parameters in force at `iteration`.
struct Snapshot {
    int iteration = 0;
    Matrix reduced;
    SnapshotStats stats;
};

struct TrialRecord {
    std::string label = "trial";
    std::uint64_t seed = 0;
    std::string config_hash;
    Json config;
    Json references = Json::object();
    NegativeClusterSet initial_clusters;
    std::vector<IterationRow> rows;
    std::vector<Snapshot> snapshots;
    std::vector<RecordedCommand> commands;
    Termination termination = Termination::Completed;
    std::string termination_detail;
    ParameterSet final_parameters;
};

/// Median percentile under the baseline, mean Mahalanobis distance, and the share of samples more
/// than 3 (Mahalanobis) from the baseline mean. `percentile_of` maps a log-density to a percentile.
template <class PercentileFn>
SnapshotStats snapshot_stats(const Matrix& reduced, const GaussianDensity& baseline, PercentileFn&& percentile_of) {
    if (reduced.cols() == 0) throw DimensionError("snapshot_stats: empty snapshot");
    std::vector<double> pct;
    pct.reserve(static_cast<std::size_t>(reduced.cols()));
    double maha = 0.0;
    std::size_t beyond = 0;
    for (Eigen::Index j = 0; j < reduced.cols(); ++j) {
        const Vector x = reduced.col(j);
        const double d2 = baseline.mahalanobis_squared(x);
        pct.push_back(percentile_of(baseline.log_normalizer() - 0.5 * d2));
        const double d = std::sqrt(d2);
        maha += d;
        if (d > 3.0) ++beyond;
    }
    std::sort(pct.begin(), pct.end());
    const std::size_t n = pct.size();
    SnapshotStats s;
    s.median_percentile = n % 2 ? pct[n / 2] : 0.5 * (pct[n / 2 - 1] + pct[n / 2]);
    s.mean_mahalanobis = maha / static_cast<double>(n);
    s.frac_beyond_3sigma = static_cast<double>(beyond) / static_cast<double>(n);
    return s;
}

inline SnapshotStats snapshot_stats(const Matrix& reduced, const GaussianDensity& baseline, const Matrix& reference) {
    const PercentileTable table(baseline, reference);
    return snapshot_stats(reduced, baseline, [&](double ld) { return table.percentile_of(ld); });
}

inline Json to_json(const IterationRow& r) {
    return Json{{"iteration", r.iteration},         {"seed", r.seed},
                {"branch", to_string(r.branch)},    {"creative_loss", r.creative_loss},
                {"anchor_loss", r.anchor_loss},     {"neg_loss", r.neg_loss},
                {"grad_norm", r.grad_norm},         {"validity", to_string(r.validity)},
                {"step_applied", r.step_applied}};
}

inline IterationRow iteration_row_from_json(const Json& j) {
    IterationRow r;
    r.iteration = j.at("iteration").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.branch = branch_from_string(j.at("branch").get<std::string>());
    r.creative_loss = j.at("creative_loss").get<double>();
    r.anchor_loss = j.at("anchor_loss").get<double>();
    r.neg_loss = j.at("neg_loss").get<double>();
    r.grad_norm = j.at("grad_norm").get<double>();
    r.validity = validity_from_string(j.at("validity").get<std::string>());
    r.step_applied = j.value("step_applied", true);
    return r;
}

inline Json to_json(const Snapshot& s) {
    return Json{{"iteration", s.iteration},
                {"stats",
                 {{"median_percentile", s.stats.median_percentile},
                  {"mean_mahalanobis", s.stats.mean_mahalanobis},
                  {"frac_beyond_3sigma", s.stats.frac_beyond_3sigma}}},
                {"reduced", tensor_to_json(s.reduced)}};
}

inline Snapshot snapshot_from_json(const Json& j) {
    Snapshot s;
    s.iteration = j.at("iteration").get<int>();
    const auto& st = j.at("stats");
    s.stats.median_percentile = st.at("median_percentile").get<double>();
    s.stats.mean_mahalanobis = st.at("mean_mahalanobis").get<double>();
    s.stats.frac_beyond_3sigma = st.at("frac_beyond_3sigma").get<double>();
    s.reduced = tensor_from_json(j.at("reduced"));
    return s;
}

inline Json to_json(const TrialRecord& r) {
    Json rows = Json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    Json snaps = Json::array();
    for (const auto& s : r.snapshots) snaps.push_back(to_json(s));
    Json cmds = Json::array();
    for (const auto& c : r.commands) cmds.push_back(to_json(c));
    return Json{{"kind", "trial_record"},
                {"schema_version", kSchemaVersion},
                {"label", r.label},
                {"seed", r.seed},
                {"config_hash", r.config_hash},
                {"config", r.config},
                {"references", r.references},
                {"initial_clusters", to_json(r.initial_clusters)},
                {"rows", rows},
                {"snapshots", snaps},
                {"commands", cmds},
                {"termination", {{"reason", to_string(r.termination)}, {"detail", r.termination_detail}}},
                {"final_parameters", to_json(r.final_parameters)}};
}

inline TrialRecord trial_record_from_json(const Json& j) {
    if (!j.is_object() || j.value("kind", "") != "trial_record") throw ConfigError("expected a 'trial_record' document");
    if (j.value("schema_version", 0) != kSchemaVersion) throw ConfigError("unsupported trial record schema_version");
    TrialRecord r;
    r.label = j.value("label", std::string("trial"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.references = j.value("references", Json::object());
    r.initial_clusters = negative_cluster_set_from_json(j.at("initial_clusters"));
    for (const auto& row : j.at("rows")) r.rows.push_back(iteration_row_from_json(row));
    for (const auto& s : j.at("snapshots")) r.snapshots.push_back(snapshot_from_json(s));
    for (const auto& c : j.at("commands")) r.commands.push_back(recorded_command_from_json(c));
    r.termination = termination_from_string(j.at("termination").at("reason").get<std::string>());
    r.termination_detail = j.at("termination").value("detail", std::string{});
    r.final_parameters = parameter_set_from_json(j.at("final_parameters"));
    return r;
}

inline const std::vector<std::string>& trajectory_csv_header() {
    static const std::vector<std::string> h{"iteration", "seed",     "branch",    "creative_loss",
                                            "anchor_loss", "neg_loss", "grad_norm", "validity"};
    return h;
}

/// Per-iteration side-car CSV.
inline void write_trajectory_csv(const TrialRecord& r, std::ostream& out) {
    CsvWriter w(out);
    w.row(trajectory_csv_header());
    for (const auto& row : r.rows) {
        w.row({std::to_string(row.iteration), std::to_string(row.seed), to_string(row.branch),
               format_double(row.creative_loss), format_double(row.anchor_loss), format_double(row.neg_loss),
               format_double(row.grad_norm), to_string(row.validity)});
    }
}

}  // namespace tailgen
