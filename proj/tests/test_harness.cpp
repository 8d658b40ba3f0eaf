#include "tailgen/harness/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>

using namespace tailgen;

namespace {

const fs::path kSource = TAILGEN_SOURCE_DIR;

/// A scratch directory holding a small but complete experiment (short prior training, few
/// baseline samples), removed when the test ends.
class HarnessTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("tailgen-") + info->test_suite_name() + "-" + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Json config_json() const {
        return Json{{"schema_version", 1},
                    {"concept_spec", (kSource / "configs" / "toy_concept.json").string()},
                    {"output_dir", (dir_ / "out").string()},
                    {"prior_checkpoint", (dir_ / "out" / "prior.json").string()},
                    {"baseline", (dir_ / "out" / "baseline.json").string()},
                    {"master_seed", 77},
                    {"pca_k", 8},
                    {"n_prior", 400},
                    {"trial_label", "t"},
                    {"prior_training", {{"steps", 300}}},
                    {"trial", {{"max_steps", 40}, {"snapshot_interval", 20}, {"snapshot_size", 32}, {"learning_rate", 5e-5}}}};
    }
    fs::path write_config(const Json& j, const std::string& name = "experiment.json") const {
        const fs::path p = dir_ / name;
        write_json_file(p, j);
        return p;
    }
    ExperimentConfig config() const { return experiment_config_from_json(config_json()); }

    void prepare(const ExperimentConfig& cfg) {
        cmd_train_prior(cfg, log_);
        cmd_sample_baseline(cfg, log_);
    }

    fs::path dir_;
    std::ostringstream log_;
};

std::vector<std::string> lines(const fs::path& p) {
    std::vector<std::string> out;
    std::stringstream ss(read_text_file(p));
    for (std::string l; std::getline(ss, l);) out.push_back(l);
    return out;
}

}  // namespace

// ---- config -------------------------------------------------------------------------------------

TEST_F(HarnessTest, ShippedConfigsLoad) {
    const fs::path cwd = fs::current_path();
    fs::current_path(kSource);
    for (const char* name : {"configs/experiment.json", "configs/wundt.json"}) {
        const ExperimentConfig c = load_experiment_config(name);
        EXPECT_EQ(c.pca_k, 8);
        EXPECT_EQ(c.n_prior, 5000);
        EXPECT_EQ(c.master_seed, 2024u);
        EXPECT_EQ(c.trial.optimizer.learning_rate, 5e-5);
    }
    EXPECT_FALSE(load_experiment_config("configs/wundt.json").trial.anchor_enabled);
    fs::current_path(cwd);
}

TEST_F(HarnessTest, ConfigRoundTripsThroughJson) {
    const ExperimentConfig c = config();
    EXPECT_EQ(to_json(experiment_config_from_json(to_json(c))).dump(), to_json(c).dump());
}

TEST_F(HarnessTest, InvalidConfigsAreRejected) {
    EXPECT_THROW(load_experiment_config(dir_ / "missing.json"), ConfigError);
    const auto bad = [&](auto&& edit) {
        Json j = config_json();
        edit(j);
        return j;
    };
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["schema_version"] = 9; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["pca_k"] = 17; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["n_prior"] = 8; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["concept_spec"] = "/nonexistent.json"; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["trial_label"] = "a/b"; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["space"] = "nowhere"; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["trial"]["anchor_threshold"] = -1; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(bad([](Json& j) { j["master_seed"] = "x"; })), ConfigError);
    EXPECT_THROW(experiment_config_from_json(Json::array()), ConfigError);
}

TEST_F(HarnessTest, OutputOverrideMovesArtifactsUnderIt) {
    ExperimentConfig c = config();
    c.concept_spec = kSource / "configs" / "toy_concept.json";
    const ExperimentConfig moved = with_output_dir(c, dir_ / "elsewhere");
    EXPECT_EQ(moved.prior_checkpoint, dir_ / "elsewhere" / "prior.json");
    EXPECT_EQ(moved.baseline, dir_ / "elsewhere" / "baseline.json");
    c.baseline = "/shared/baseline.json";
    EXPECT_EQ(with_output_dir(c, dir_ / "elsewhere").baseline, fs::path("/shared/baseline.json"));
}

// ---- stages -------------------------------------------------------------------------------------

TEST_F(HarnessTest, StagesAreIdempotentByFileHash) {
    const ExperimentConfig cfg = config();
    const TrainPriorResult first = cmd_train_prior(cfg, log_);
    const std::string loss_csv = file_digest(cfg.output_dir / "prior_loss.csv");
    cmd_train_prior(cfg, log_);
    EXPECT_EQ(file_digest(cfg.prior_checkpoint), first.digest);
    EXPECT_EQ(file_digest(cfg.output_dir / "prior_loss.csv"), loss_csv);
    EXPECT_EQ(lines(cfg.output_dir / "prior_loss.csv").size(), 301u);

    cmd_sample_baseline(cfg, log_);
    const std::string base = file_digest(cfg.baseline);
    cmd_sample_baseline(cfg, log_);
    EXPECT_EQ(file_digest(cfg.baseline), base);
    EXPECT_NE(log_.str().find("explained variance total"), std::string::npos);

    const TrialRunResult a = cmd_run_trial(cfg, {}, log_);
    const std::string rec = file_digest(a.record_path), csv = file_digest(a.csv_path);
    cmd_run_trial(cfg, {}, log_);
    EXPECT_EQ(file_digest(a.record_path), rec);
    EXPECT_EQ(file_digest(a.csv_path), csv);

    ExperimentConfig other = cfg;
    other.master_seed = 78;
    cmd_train_prior(other, log_);
    EXPECT_NE(file_digest(cfg.prior_checkpoint), first.digest);
}

TEST_F(HarnessTest, BaselineFromAnotherCheckpointIsRejected) {
    const ExperimentConfig cfg = config();
    prepare(cfg);
    ExperimentConfig retrained = cfg;
    retrained.prior_training.steps = 301;
    cmd_train_prior(retrained, log_);
    EXPECT_THROW(TrialContext::load(cfg), ConfigError);
}

TEST_F(HarnessTest, RunTrialWritesRecordAndTrajectory) {
    const ExperimentConfig cfg = config();
    prepare(cfg);
    const TrialRunResult r = cmd_run_trial(cfg, {}, log_);
    EXPECT_EQ(r.exit_code, kExitOk);
    EXPECT_EQ(r.record_path, cfg.output_dir / "t.json");
    const TrialRecord back = trial_record_from_json(read_json_file(r.record_path));
    EXPECT_EQ(to_json(back).dump(), to_json(r.record).dump());
    EXPECT_EQ(back.rows.size(), 40u);
    EXPECT_EQ(back.references["baseline"]["digest"], file_digest(cfg.baseline));
    EXPECT_EQ(back.seed, stage_seeds(77).trial);

    const auto csv = lines(r.csv_path);
    ASSERT_EQ(csv.size(), 41u);
    EXPECT_EQ(csv[0], "iteration,seed,branch,creative_loss,anchor_loss,neg_loss,grad_norm,validity");
    EXPECT_NE(log_.str().find("final snapshot @40"), std::string::npos);
}

TEST_F(HarnessTest, OracleTerminationStillWritesTheRecord) {
    const ExperimentConfig cfg = config();
    prepare(cfg);
    // Shrink the validity region stored with the checkpoint so the very first check fails.
    Json spec = read_json_file(cfg.concept_spec);
    spec["validity_radius"] = 0.01;
    PriorCheckpoint ck = load_checkpoint(cfg.prior_checkpoint);
    ck.concept_spec = concept_spec_from_json(spec);
    write_json_file(cfg.prior_checkpoint, to_json(ck));
    cmd_sample_baseline(cfg, log_);

    const TrialRunResult r = cmd_run_trial(cfg, {}, log_);
    EXPECT_EQ(r.record.termination, Termination::OracleRejected);
    EXPECT_EQ(r.exit_code, kExitOracle);
    EXPECT_TRUE(fs::exists(r.record_path));
    EXPECT_NE(log_.str().find("oracle_rejected"), std::string::npos);
}

TEST_F(HarnessTest, LabelNegativeFitsAndIsReproducible) {
    const ExperimentConfig cfg = config();
    prepare(cfg);
    const TrialRunResult r = cmd_run_trial(cfg, {}, log_);

    LabelOptions all;
    all.out = dir_ / "neg.json";
    const NegativeClusterSet set = cmd_label_negative(r.record_path, all, log_);
    ASSERT_EQ(set.size(), 1u);
    EXPECT_EQ(set[0].id, "t@40");
    EXPECT_EQ(set[0].strength, 0.5);
    const std::string digest = file_digest(all.out);
    cmd_label_negative(r.record_path, all, log_);
    EXPECT_EQ(file_digest(all.out), digest);

    LabelOptions two = all;
    two.sample_ids = {0, 1};
    EXPECT_THROW(cmd_label_negative(r.record_path, two, log_), FitError);
    LabelOptions out_of_range = all;
    out_of_range.sample_ids = {0, 1, 32};
    EXPECT_THROW(cmd_label_negative(r.record_path, out_of_range, log_), ConfigError);
    LabelOptions bad_snapshot = all;
    bad_snapshot.snapshot = 3;
    EXPECT_THROW(cmd_label_negative(r.record_path, bad_snapshot, log_), ConfigError);
    LabelOptions first = all;
    first.snapshot = 0;
    first.sample_ids = {3, 4, 5, 6};
    first.strength = 0.25;
    first.out = dir_ / "neg0.json";
    EXPECT_EQ(cmd_label_negative(r.record_path, first, log_)[0].id, "t@0");
}

TEST_F(HarnessTest, ResumeWithNegativesReferencesBoth) {
    const ExperimentConfig cfg = config();
    prepare(cfg);
    const TrialRunResult a = cmd_run_trial(cfg, {}, log_);
    LabelOptions lab;
    lab.out = dir_ / "neg.json";
    cmd_label_negative(a.record_path, lab, log_);

    TrialRunOptions opt;
    opt.resume = a.record_path;
    opt.negative = lab.out;
    const TrialRunResult b = cmd_run_trial(cfg, opt, log_);
    EXPECT_EQ(b.record_path, cfg.output_dir / "t-resumed.json");
    EXPECT_EQ(b.record.references["resumed_from"]["digest"], file_digest(a.record_path));
    EXPECT_EQ(b.record.references["negative_clusters"]["digest"], file_digest(lab.out));
    ASSERT_EQ(b.record.initial_clusters.size(), 1u);
    EXPECT_EQ(b.record.initial_clusters[0].id, "t@40");
    EXPECT_NE(b.record.rows[0].neg_loss, 0.0);
    // The first row of the resumed trial is evaluated at A's final parameters, not a fresh space.
    EXPECT_NE(b.record.rows[0].creative_loss, a.record.rows[0].creative_loss);

    TrialRunOptions wrong_dim;
    wrong_dim.negative = dir_ / "wrong.json";
    CounterRng rng(1);
    write_json_file(*wrong_dim.negative, to_json(NegativeClusterSet{fit_negative_cluster_reduced(rng.normal_matrix(3, 10), 1.0)}));
    EXPECT_THROW(cmd_run_trial(cfg, wrong_dim, log_), DimensionError);
}

TEST_F(HarnessTest, ReportWritesPlotReadyCsvs) {
    ExperimentConfig cfg = config();
    prepare(cfg);
    std::vector<fs::path> records;
    std::vector<TrialRecord> recs;
    for (std::uint64_t s : {1, 2, 3}) {
        TrialRunOptions opt;
        opt.trial_seed = s;
        opt.label = "seed" + std::to_string(s);
        recs.push_back(cmd_run_trial(cfg, opt, log_).record);
        records.push_back(cfg.output_dir / (*opt.label + ".json"));
    }
    records.push_back(records[0]);
    recs.push_back(recs[0]);
    cmd_report(records, dir_ / "report", log_);
    std::size_t n_snap = 0, n_rows = 0;
    for (const auto& r : recs) {
        n_snap += r.snapshots.size();
        n_rows += r.rows.size();
    }

    const auto pct = lines(dir_ / "report" / "percentile_vs_iteration.csv");
    EXPECT_EQ(pct[0], "series,iteration,median_percentile,mean_mahalanobis,frac_beyond_3sigma");
    EXPECT_EQ(pct.size(), 1 + n_snap);
    std::set<std::string> series;
    for (std::size_t i = 1; i < pct.size(); ++i) series.insert(pct[i].substr(0, pct[i].find(',')));
    EXPECT_EQ(series, (std::set<std::string>{"seed1", "seed2", "seed3", "seed1_2"}));

    const auto loss = lines(dir_ / "report" / "loss_vs_iteration.csv");
    EXPECT_EQ(loss[0], "series,iteration,branch,creative_loss,anchor_loss,neg_loss,grad_norm");
    EXPECT_EQ(loss.size(), 1 + n_rows);
    const auto scatter = lines(dir_ / "report" / "scatter_seed2.csv");
    EXPECT_EQ(scatter[0], "iteration,x,y,cluster_tag");
    EXPECT_EQ(scatter.size(), 1 + 32 * recs[1].snapshots.size());
    EXPECT_NE(scatter[1].find(",none"), std::string::npos);
}

TEST_F(HarnessTest, EmptyRecordGivesHeaderOnlyCsvs) {
    TrialRecord empty;
    empty.label = "empty";
    write_json_file(dir_ / "empty.json", to_json(empty));
    cmd_report({dir_ / "empty.json"}, dir_ / "report", log_);
    for (const char* f : {"percentile_vs_iteration.csv", "loss_vs_iteration.csv", "scatter_empty.csv"})
        EXPECT_EQ(lines(dir_ / "report" / f).size(), 1u) << f;
}

// ---- the binary ---------------------------------------------------------------------------------

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TAILGEN_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(HarnessTest, CliExitCodes) {
    EXPECT_EQ(run_cli(""), kExitConfig);
    EXPECT_EQ(run_cli("frobnicate"), kExitConfig);
    EXPECT_EQ(run_cli("train-prior --config " + (dir_ / "missing.json").string()), kExitConfig);

    Json j = config_json();
    j["concept_spec"] = (dir_ / "no_spec.json").string();
    EXPECT_EQ(run_cli("train-prior --config " + write_config(j, "nospec.json").string()), kExitConfig);

    const fs::path conf = write_config(config_json());
    EXPECT_EQ(run_cli("run-trial --config " + conf.string()), kExitConfig);  // no checkpoint yet
    EXPECT_EQ(run_cli("train-prior --config " + conf.string()), kExitOk);
    EXPECT_EQ(run_cli("sample-baseline --config " + conf.string()), kExitOk);
    EXPECT_EQ(run_cli("run-trial --config " + conf.string()), kExitOk);
    const fs::path rec = dir_ / "out" / "t.json";
    EXPECT_EQ(run_cli("label-negative " + rec.string() + " --samples 0,1"), 3);
    EXPECT_EQ(run_cli("label-negative " + rec.string() + " --samples 0,x"), kExitConfig);
    EXPECT_EQ(run_cli("label-negative " + rec.string()), kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "out" / "t.negative.json"));
    EXPECT_EQ(run_cli("report " + rec.string() + " --out " + (dir_ / "rep").string()), kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "rep" / "scatter_t.csv"));

    // --out relocates every stage output, including checkpoint and baseline.
    EXPECT_EQ(run_cli("train-prior --config " + conf.string() + " --out " + (dir_ / "alt").string()), kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "alt" / "prior.json"));
    EXPECT_EQ(file_digest(dir_ / "alt" / "prior.json"), file_digest(dir_ / "out" / "prior.json"));
    EXPECT_EQ(run_cli("train-prior --config " + conf.string() + " --out " + (dir_ / "alt2").string() + " --seed 5"),
              kExitOk);
    EXPECT_NE(file_digest(dir_ / "alt2" / "prior.json"), file_digest(dir_ / "out" / "prior.json"));
}
