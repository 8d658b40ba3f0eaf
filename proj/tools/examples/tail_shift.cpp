// End to end in one process: train a small prior, fit the baseline, push one trial toward the
// tail and print the snapshot medians.

#include "tailgen/creative/trial.hpp"
#include "tailgen/prior/train.hpp"

#include <iostream>

using namespace tailgen;

int main(int argc, char** argv) {
    const int steps = argc > 1 ? std::atoi(argv[1]) : 300;

    const ConceptDataset data(default_concept_spec(), 1);
    const NoiseSchedule schedule = NoiseSchedule::linear();
    TrainOptions train;
    train.steps = 4000;
    const DenoiserNet net = train_prior(DenoiserNet::init(DenoiserDims{}, 2), data, schedule, data.token(), train, 3).net;

    const Matrix samples = sample_prior_batch(net, schedule, data.token(), nullptr, 5, 5000, 11);
    const PcaModel pca = fit_pca(samples, 8);
    const Matrix reduced = pca.project_columns(samples);
    const GaussianDensity baseline = fit_gaussian(reduced, false);
    const ConceptRegionOracle oracle(data);

    TrialSetup setup;
    setup.net = &net;
    setup.schedule = &schedule;
    setup.pca = &pca;
    setup.baseline = &baseline;
    setup.baseline_reduced = &reduced;
    setup.oracle = &oracle;
    setup.anchor = data.anchor();
    setup.base_token = data.token();

    LossConfig cfg;
    cfg.max_steps = steps;
    cfg.optimizer.learning_rate = 5e-5;
    const TrialRecord rec = run_trial(setup, cfg, {}, 100);

    std::cout << "termination: " << to_string(rec.termination) << " after " << rec.rows.size() << " iterations\n";
    for (const auto& s : rec.snapshots)
        std::cout << "  iteration " << s.iteration << ": median percentile " << s.stats.median_percentile
                  << ", mean mahalanobis " << s.stats.mean_mahalanobis << "\n";
}
