#include "fixtures.hpp"

#include "tailgen/autodiff/grad_check.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <thread>

using namespace tailgen;
using fixture::world;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

GaussianDensity isotropic(const Vector& mean, double var) {
    return GaussianDensity(mean, Matrix::Identity(mean.size(), mean.size()) * var);
}

}  // namespace

// ---- creative loss ------------------------------------------------------------------------------

TEST(CreativeLoss, MaximalWithZeroGradientAtTheMean) {
    CounterRng rng(1);
    const GaussianDensity g = fit_gaussian(rng.normal_matrix(3, 500), true);
    const double top = creative_loss(g, Vector::Zero(3));
    EXPECT_EQ(creative_loss_grad(g, Vector::Zero(3)), Vector::Zero(3));
    for (int i = 0; i < 20; ++i) EXPECT_LT(creative_loss(g, rng.normal_vector(3)), top);
}

TEST(CreativeLoss, ScalarExample) {
    const GaussianDensity g = isotropic(Vector::Zero(1), 1.0);
    EXPECT_NEAR(creative_loss(g, vec({2.0})), -2.9189385, 1e-7);
}

TEST(CreativeLoss, SmallDescentStepDecreasesIt) {
    CounterRng rng(2);
    const GaussianDensity g(Vector::Zero(4), Matrix::Identity(4, 4) * 0.7);
    for (int i = 0; i < 20; ++i) {
        const Vector x = rng.normal_vector(4);
        EXPECT_LT(creative_loss(g, x - 1e-3 * creative_loss_grad(g, x)), creative_loss(g, x));
    }
}

// ---- anchor loss --------------------------------------------------------------------------------

TEST(AnchorLoss, ParallelOrthogonalOpposite) {
    const Vector a = vec({0, 0, 1});
    EXPECT_NEAR(anchor_loss(vec({0, 0, 5}), a), 0.0, 1e-15);
    EXPECT_NEAR(anchor_loss(vec({2, 0, 0}), a), 1.0, 1e-15);
    EXPECT_NEAR(anchor_loss(vec({0, 0, -3}), a), 2.0, 1e-15);
}

TEST(AnchorLoss, ZeroNormIsAnError) {
    EXPECT_THROW(anchor_loss(Vector::Zero(3), vec({1, 0, 0})), NumericError);
    EXPECT_THROW(anchor_loss(vec({1, 0}), vec({1, 0, 0})), DimensionError);
}

TEST(AnchorLoss, GradientMatchesFiniteDifferences) {
    CounterRng rng(3);
    const double h = 1e-6;
    for (int t = 0; t < 20; ++t) {
        const Vector e = rng.normal_vector(5), a = rng.normal_vector(5);
        const Vector g = anchor_loss_grad(e, a);
        for (Eigen::Index i = 0; i < 5; ++i) {
            Vector up = e, dn = e;
            up[i] += h;
            dn[i] -= h;
            EXPECT_NEAR(g[i], (anchor_loss(up, a) - anchor_loss(dn, a)) / (2 * h), 1e-7);
        }
    }
}

// ---- negative loss ------------------------------------------------------------------------------

TEST(NegativeLoss, EmptyOrZeroStrengthIsZero) {
    EXPECT_EQ(negative_loss({}, vec({1, 2})), 0.0);
    const NegativeClusterSet zero{{isotropic(Vector::Zero(2), 1.0), 0.0, "z"}};
    EXPECT_EQ(negative_loss(zero, vec({1, 2})), 0.0);
    EXPECT_EQ(negative_loss_grad(zero, vec({1, 2})), Vector::Zero(2));
}

TEST(NegativeLoss, RepulsiveModeDecreasesAlongEveryRayFromTheCenter) {
    CounterRng rng(4);
    const Vector c = vec({1.0, -2.0, 0.5});
    const NegativeClusterSet set{{GaussianDensity(c, Matrix(Vector(vec({1.0, 2.0, 0.5})).asDiagonal())), 1.0, "n"}};
    EXPECT_LT(negative_loss_grad(set, c).norm(), 1e-15);
    for (int r = 0; r < 20; ++r) {
        const Vector dir = Vector(rng.normal_vector(3)).normalized();
        double prev = negative_loss(set, c);
        for (double s = 0.1; s < 3.0; s += 0.1) {
            const double v = negative_loss(set, c + s * dir);
            EXPECT_LT(v, prev);
            prev = v;
        }
    }
}

TEST(NegativeLoss, AttractiveModeFlipsTheSign) {
    const NegativeClusterSet set{{isotropic(vec({1, 1}), 2.0), 0.7, "n"}};
    const Vector x = vec({0.3, -0.4});
    EXPECT_DOUBLE_EQ(negative_loss(set, x, NegativeMode::Attractive), -negative_loss(set, x));
    EXPECT_DOUBLE_EQ(negative_loss(set, x), 0.7 * set[0].density.log_pdf(x));
}

// ---- total loss and switching -------------------------------------------------------------------

TEST(TotalLoss, BranchSelectsTheTerms) {
    EXPECT_EQ(total_loss(-3.0, 0.5, 0.4, Branch::Anchor), 0.4);
    EXPECT_EQ(total_loss(-3.0, 0.0, 0.4, Branch::Creative), -3.0);
    EXPECT_EQ(total_loss(-3.0, 0.5, 0.4, Branch::Creative), -2.5);
    EXPECT_TRUE(std::isfinite(total_loss(-1e300, -1e300, 2.0, Branch::Creative)));
}

TEST(DynamicSelect, ThresholdRule) {
    EXPECT_EQ(dynamic_loss_select(0.0, 0.3), std::pair(Branch::Creative, SeedPolicy::NewSeed));
    EXPECT_EQ(dynamic_loss_select(0.5, 0.3), std::pair(Branch::Anchor, SeedPolicy::SameSeed));
    EXPECT_EQ(dynamic_loss_select(0.3, 0.3), std::pair(Branch::Anchor, SeedPolicy::SameSeed));
}

// ---- validity oracle ----------------------------------------------------------------------------

TEST(Validity, EvaluatedOnlyOnTheInterval) {
    const ConceptDataset d = make_concept(default_concept_spec(), 1);
    const ConceptRegionOracle o(d);
    const Vector mean = d.spec().components[0].mean;
    EXPECT_EQ(validity_check(o, mean, 25, 25), Validity::Pass);
    EXPECT_EQ(validity_check(o, mean, 26, 25), Validity::Skipped);
    EXPECT_EQ(validity_check(o, mean, 0, 25), Validity::Pass);
    EXPECT_EQ(validity_check(o, 100.0 * mean, 50, 25), Validity::Fail);
    EXPECT_THROW(validity_check(o, mean, 1, 0), ConfigError);
}

TEST(Validity, ConceptRegionUsesComponentMahalanobis) {
    const ConceptDataset d = make_concept(default_concept_spec(), 1);
    const ConceptRegionOracle o(d);
    EXPECT_EQ(o.radius(), 8.0);
    const auto& c = d.spec().components[2];
    // Walk along the leading eigenvector: the boundary sits at exactly R standard deviations.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.covariance);
    const Vector v = eig.eigenvectors().col(eig.eigenvalues().size() - 1);
    const double sd = std::sqrt(eig.eigenvalues().maxCoeff());
    EXPECT_TRUE(o.accepts(c.mean + 7.9 * sd * v));
    EXPECT_FALSE(o.accepts(c.mean + 8.1 * sd * v + 8.1 * sd * Vector::Unit(16, 15)));
    Vector nan = c.mean;
    nan[0] = std::nan("");
    EXPECT_FALSE(o.accepts(nan));
    EXPECT_TRUE(AlwaysPassOracle{}.accepts(1e6 * c.mean));
    EXPECT_THROW(ConceptRegionOracle(d, 0.0), ConfigError);
}

// ---- negative clusters --------------------------------------------------------------------------

TEST(NegativeCluster, TightSamplesAroundAPoint) {
    const auto& w = world();
    const PcaModel& pca = w.baseline.pca;
    CounterRng rng(5);
    const Vector p = w.baseline.samples.col(17);
    Matrix labeled(16, 100);
    for (Eigen::Index j = 0; j < 100; ++j) labeled.col(j) = p + 0.01 * rng.normal_vector(16);
    const NegativeCluster c = fit_negative_cluster(labeled, pca, 0.37, "x");
    EXPECT_LT((c.density.mean() - pca.project(p)).norm(), 0.01);
    EXPECT_LT(c.density.covariance().cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_EQ(c.strength, 0.37);
    EXPECT_EQ(c.id, "x");
    const NegativeCluster again = fit_negative_cluster(labeled, pca, 0.37, "x");
    EXPECT_EQ(again.density.mean(), c.density.mean());
    EXPECT_EQ(again.density.covariance(), c.density.covariance());
}

TEST(NegativeCluster, FewSamplesShrinkToIsotropic) {
    CounterRng rng(6);
    const Matrix reduced = rng.normal_matrix(8, 4);
    const NegativeCluster c = fit_negative_cluster_reduced(reduced, 1.0);
    const Matrix cov = c.density.covariance();
    EXPECT_NEAR((cov - Matrix::Identity(8, 8) * cov(0, 0)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
    EXPECT_LT((c.density.mean() - Vector(reduced.rowwise().mean())).norm(), 1e-15);
    EXPECT_THROW(fit_negative_cluster_reduced(rng.normal_matrix(8, 2), 1.0), FitError);
    EXPECT_THROW(fit_negative_cluster_reduced(rng.normal_matrix(8, 20), -1.0), ConfigError);
}

TEST(NegativeCluster, SetRoundTripsThroughJson) {
    CounterRng rng(7);
    const NegativeClusterSet set{fit_negative_cluster_reduced(rng.normal_matrix(3, 30), 0.5, "a"),
                                 fit_negative_cluster_reduced(rng.normal_matrix(3, 3), 2.0, "b")};
    const NegativeClusterSet back = negative_cluster_set_from_json(Json::parse(to_json(set).dump()));
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].id, set[i].id);
        EXPECT_EQ(back[i].strength, set[i].strength);
        EXPECT_EQ(back[i].density.covariance(), set[i].density.covariance());
    }
}

// ---- snapshot stats -----------------------------------------------------------------------------

TEST(SnapshotStats, BaselineItselfSitsAtTheMedian) {
    const auto& w = world();
    const SnapshotStats s = snapshot_stats(w.reduced, w.baseline.gaussian, w.reduced);
    EXPECT_NEAR(s.median_percentile, 50.0, 3.0);
    // A fresh draw from the same prior is statistically the same population.
    const auto& ck = w.checkpoint;
    const Matrix fresh = w.baseline.pca.project_columns(
        sample_prior_batch(ck.net, ck.schedule, ck.token, nullptr, 5, 1000, 4242));
    EXPECT_NEAR(snapshot_stats(fresh, w.baseline.gaussian, w.reduced).median_percentile, 50.0, 3.0);
}

TEST(SnapshotStats, MeanAndDeepTail) {
    const auto& w = world();
    const Vector mean = w.baseline.gaussian.mean();
    const Matrix at_mean = mean.replicate(1, 10);
    const SnapshotStats top = snapshot_stats(at_mean, w.baseline.gaussian, w.reduced);
    EXPECT_NEAR(top.median_percentile, 100.0, 0.1);
    EXPECT_NEAR(top.mean_mahalanobis, 0.0, 1e-12);
    const Matrix far = (mean + 50.0 * Vector::Ones(mean.size())).replicate(1, 10);
    const SnapshotStats tail = snapshot_stats(far, w.baseline.gaussian, w.reduced);
    EXPECT_EQ(tail.frac_beyond_3sigma, 1.0);
    EXPECT_EQ(tail.median_percentile, 0.0);
    EXPECT_THROW(snapshot_stats(Matrix(mean.size(), 0), w.baseline.gaussian, w.reduced), DimensionError);
}

// ---- graph losses vs plain losses, and their gradients through the sampler ----------------------

namespace {

struct LossGraphCase {
    TrialSetup setup;
    LossConfig cfg;
    ParameterSet space;
    NegativeClusterSet clusters;
};

LossGraphCase loss_case(std::uint64_t seed) {
    const auto& w = world();
    LossGraphCase c;
    c.setup = w.setup("grad");
    c.cfg.lora_rank = 4;
    c.space = initial_space(c.setup, c.cfg, seed);
    CounterRng rng(seed);
    for (auto& e : c.space.entries())
        if (e.name.ends_with(".B")) e.value = 0.02 * rng.normal_matrix(e.value.rows(), e.value.cols());
    c.clusters = {fit_negative_cluster_reduced(w.reduced.leftCols(50), 0.5, "n")};
    return c;
}

}  // namespace

TEST(LossGraph, NodesAgreeWithPlainFunctions) {
    const auto& w = world();
    LossGraphCase c = loss_case(1);
    TrialGraph tg = build_trial_graph(c.setup, c.cfg, c.space, c.clusters);
    tg.graph.forward({{"x_T", trajectory_noise(5, 16)}}, ParameterLookup{&w.checkpoint.net.params, &c.space});
    const Vector e = tg.graph.value(tg.sample).col(0);
    const Vector r = tg.graph.value(tg.reduced).col(0);
    EXPECT_LT((r - w.baseline.pca.project(e)).norm(), 1e-12);
    EXPECT_NEAR(tg.graph.scalar(tg.creative), creative_loss(w.baseline.gaussian, r), 1e-10);
    EXPECT_NEAR(tg.graph.scalar(tg.anchor), anchor_loss(e, c.setup.anchor), 1e-12);
    EXPECT_NEAR(tg.graph.scalar(tg.negative), negative_loss(c.clusters, r), 1e-10);
    EXPECT_NEAR(tg.graph.scalar(tg.creative_total), creative_loss(w.baseline.gaussian, r) + negative_loss(c.clusters, r), 1e-10);
}

TEST(LossGraph, AllLossGradientsMatchFiniteDifferences) {
    const auto& w = world();
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        LossGraphCase c = loss_case(seed);
        TrialGraph tg = build_trial_graph(c.setup, c.cfg, c.space, c.clusters);
        const Vector noise = trajectory_noise(derive_seed(seed, 9), 16);
        for (NodeId out : {tg.creative, tg.anchor, tg.negative}) {
            DifferentiableFn fn = [&](const ParameterSet& ps) {
                const ParameterLookup lookup{&w.checkpoint.net.params, &ps};
                tg.graph.forward({{"x_T", noise}}, lookup);
                return std::pair{tg.graph.scalar(out), tg.graph.backward(out, lookup)};
            };
            GradCheckOptions opt;
            opt.seed = seed;
            const auto r = grad_check(fn, c.space, opt);
            EXPECT_LT(r.max_rel_error, 1e-4) << "node " << out.index << " worst " << r.worst;
        }
    }
}

// ---- config, records and commands ---------------------------------------------------------------

TEST(LossConfig, DefaultsAndValidation) {
    const LossConfig d;
    EXPECT_EQ(d.checker_interval, 25);
    EXPECT_EQ(d.max_steps, 1000);
    EXPECT_EQ(d.optimizer.learning_rate, 1e-4);
    EXPECT_EQ(d.optimizer.weight_decay, 0.01);
    EXPECT_EQ(d.lora_rank, 10);
    EXPECT_EQ(d.sample_steps, 5);
    EXPECT_EQ(d.anchor_threshold, 0.3);
    EXPECT_EQ(d.neg_mode, NegativeMode::Repulsive);
    EXPECT_NO_THROW(d.validate());

    EXPECT_THROW(loss_config_from_json(Json{{"anchor_threshold", 2.0}}), ConfigError);
    EXPECT_THROW(loss_config_from_json(Json{{"checker_interval", 0}}), ConfigError);
    EXPECT_THROW(loss_config_from_json(Json{{"space", "everything"}}), ConfigError);
    EXPECT_THROW(loss_config_from_json(Json{{"max_steps", "many"}}), ConfigError);
    const LossConfig round = loss_config_from_json(to_json(d));
    EXPECT_EQ(to_json(round), to_json(d));
}

TEST(Record, JsonRoundTripAndCsvHeader) {
    TrialRecord r;
    r.label = "x";
    r.seed = 99;
    r.config = to_json(LossConfig{});
    r.config_hash = "abc";
    IterationRow row;
    row.iteration = 0;
    row.seed = 123456789012345ULL;
    row.branch = Branch::Anchor;
    row.creative_loss = -1.25;
    row.anchor_loss = 0.5;
    row.validity = Validity::Pass;
    r.rows.push_back(row);
    Snapshot s;
    s.iteration = 0;
    s.reduced = Matrix::Ones(2, 3);
    s.stats.median_percentile = 42.0;
    r.snapshots.push_back(s);
    r.commands.push_back({0, TrialCommand::stop()});
    r.termination = Termination::StoppedByUser;
    r.final_parameters.add("token", Matrix::Ones(2, 1));

    const Json j = to_json(r);
    const TrialRecord back = trial_record_from_json(Json::parse(j.dump()));
    EXPECT_EQ(to_json(back).dump(), j.dump());
    EXPECT_EQ(back.rows[0].seed, 123456789012345ULL);
    EXPECT_EQ(back.termination, Termination::StoppedByUser);

    std::ostringstream csv;
    write_trajectory_csv(r, csv);
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
              "iteration,seed,branch,creative_loss,anchor_loss,neg_loss,grad_norm,validity");
    EXPECT_NE(csv.str().find("0,123456789012345,anchor,-1.25,0.5,0,0,pass"), std::string::npos);
    EXPECT_THROW(trial_record_from_json(Json{{"kind", "other"}}), ConfigError);
}

TEST(Commands, ReplayDeliversAtTheLoggedIteration) {
    ReplayCommands replay({{3, TrialCommand::stop()}});
    EXPECT_TRUE(replay.poll(2).empty());
    ASSERT_EQ(replay.poll(3).size(), 1u);
    EXPECT_EQ(replay.poll(3)[0].type, TrialCommand::Type::Stop);
}

TEST(Commands, QueueBlocksWhilePausedUntilResumeOrStop) {
    CommandQueue q;
    q.pause();
    std::atomic<bool> returned{false};
    std::thread t([&] {
        q.poll(0);
        returned = true;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    EXPECT_FALSE(returned.load());
    q.resume();
    t.join();
    EXPECT_TRUE(returned.load());

    q.pause();
    std::vector<TrialCommand> got;
    std::thread t2([&] { got = q.poll(1); });
    q.push(TrialCommand::stop());
    t2.join();
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].type, TrialCommand::Type::Stop);
}
