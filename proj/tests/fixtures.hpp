#pragma once

// A small trained prior and baseline shared by the prior, creative and trial tests. Built once per
// test binary; everything is derived from a fixed master seed.

#include "tailgen/harness/commands.hpp"

#include <memory>

namespace fixture {

using namespace tailgen;

inline constexpr std::uint64_t kMaster = 2024;
inline constexpr int kTrainSteps = 4000;
inline constexpr int kBaselineSize = 2000;
inline constexpr int kReducedDim = 8;

inline PriorCheckpoint train_toy_prior(int steps = kTrainSteps, std::vector<double>* losses = nullptr) {
    const ConceptSpec spec = default_concept_spec();
    const StageSeeds seeds = stage_seeds(kMaster);
    const ConceptDataset data(spec, seeds.prior_data);
    DenoiserDims dims;
    dims.ambient = static_cast<int>(data.dim());
    dims.cond = static_cast<int>(data.token().size());
    const NoiseSchedule schedule = NoiseSchedule::linear();
    TrainResult r = train_prior(DenoiserNet::init(dims, seeds.prior_init), data, schedule, data.token(),
                                TrainOptions{steps}, seeds.prior_train);
    if (losses) *losses = r.losses;
    return {std::move(r.net), schedule, spec, data.token(), seeds.prior_data, steps};
}

inline BaselineArtifact sample_toy_baseline(const PriorCheckpoint& ck, int n = kBaselineSize) {
    BaselineArtifact b;
    b.sample_steps = 5;
    b.samples = sample_prior_batch(ck.net, ck.schedule, ck.token, nullptr, 5, static_cast<std::size_t>(n),
                                   stage_seeds(kMaster).baseline);
    b.pca = fit_pca(b.samples, kReducedDim);
    b.gaussian = fit_gaussian(b.reduced(), false);
    return b;
}

/// The shared world: trained once, then read-only.
inline const TrialContext& world() {
    static const std::unique_ptr<TrialContext> ctx = [] {
        PriorCheckpoint ck = train_toy_prior();
        BaselineArtifact b = sample_toy_baseline(ck);
        return std::make_unique<TrialContext>(std::move(ck), std::move(b));
    }();
    return *ctx;
}

}  // namespace fixture
