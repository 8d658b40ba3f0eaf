// tailgen: train a toy prior, sample the baseline, run creative trials, label negative clusters,
// emit plot data, or serve the steering API.

#include "tailgen/harness/commands.hpp"
#include "tailgen/service/steer_service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

using namespace tailgen;

namespace {

SteerService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

std::vector<Eigen::Index> parse_ids(const std::string& list) {
    std::vector<Eigen::Index> ids;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        long long v = 0;
        try {
            v = std::stoll(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size()) throw ConfigError("bad sample id '" + tok + "'");
        ids.push_back(static_cast<Eigen::Index>(v));
    }
    return ids;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic creative generation on a toy diffusion prior"};
    app.require_subcommand(1);

    std::string config_path = "configs/experiment.json";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Experiment config (JSON)");
        sub->add_option("--seed", seed, "Override the master seed");
        sub->add_option("--out", out, "Override the output directory");
    };

    auto* train = app.add_subcommand("train-prior", "Train the toy diffusion prior");
    add_common(train);

    auto* sample = app.add_subcommand("sample-baseline", "Sample the prior and fit PCA + Gaussian baseline");
    add_common(sample);

    auto* trial = app.add_subcommand("run-trial", "Run one creative-optimization trial");
    add_common(trial);
    TrialRunOptions trial_opt;
    std::optional<std::string> negative_file, resume_file, label;
    trial->add_option("--negative", negative_file, "Negative-cluster file to apply");
    trial->add_option("--resume", resume_file, "Continue from a trial record's final parameters");
    trial->add_option("--label", label, "Record label (file stem)");

    auto* labelneg = app.add_subcommand("label-negative", "Fit a negative cluster from a recorded snapshot");
    std::string record_file;
    std::optional<std::size_t> snapshot_index;
    std::string sample_ids;
    double alpha = 0.5;
    std::optional<std::string> label_out;
    labelneg->add_option("record", record_file, "Trial record")->required();
    labelneg->add_option("--snapshot", snapshot_index, "Snapshot index (default: last)");
    labelneg->add_option("--samples", sample_ids, "Comma-separated sample ids within the snapshot");
    labelneg->add_option("--alpha", alpha, "Cluster strength")->check(CLI::NonNegativeNumber);
    labelneg->add_option("--out", label_out, "Output file (default: <record>.negative.json)");

    auto* report = app.add_subcommand("report", "Write plot-ready CSVs from trial records");
    std::vector<std::string> report_records;
    std::string report_out = "out/report";
    report->add_option("records", report_records, "Trial records")->required();
    report->add_option("--out", report_out, "Output directory");

    auto* serve = app.add_subcommand("serve", "Serve the steering API");
    std::string host = kDefaultHost;
    int port = kDefaultPort;
    serve->add_option("--host", host, "Listen address");
    serve->add_option("--port", port, "Listen port")->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    auto load = [&] {
        ExperimentConfig cfg = load_experiment_config(config_path);
        if (seed) cfg.master_seed = *seed;
        if (out) cfg = with_output_dir(std::move(cfg), *out);
        return cfg;
    };

    try {
        if (train->parsed()) {
            cmd_train_prior(load(), std::cout);
        } else if (sample->parsed()) {
            cmd_sample_baseline(load(), std::cout);
        } else if (trial->parsed()) {
            if (negative_file) trial_opt.negative = *negative_file;
            if (resume_file) trial_opt.resume = *resume_file;
            trial_opt.label = label;
            return cmd_run_trial(load(), trial_opt, std::cout).exit_code;
        } else if (labelneg->parsed()) {
            LabelOptions opt;
            opt.snapshot = snapshot_index;
            opt.sample_ids = parse_ids(sample_ids);
            opt.strength = alpha;
            if (label_out) {
                opt.out = *label_out;
            } else {
                opt.out = fs::path(record_file);
                opt.out.replace_extension(".negative.json");
            }
            cmd_label_negative(record_file, opt, std::cout);
        } else if (report->parsed()) {
            std::vector<fs::path> paths(report_records.begin(), report_records.end());
            cmd_report(paths, report_out, std::cout);
        } else if (serve->parsed()) {
            SteerService service;
            const int bound = service.bind(host, port);
            if (bound < 0) {
                std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
                return kExitRuntime;
            }
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << "listening on http://" << host << ":" << bound << "/api" << std::endl;
            service.serve();
            g_service = nullptr;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
