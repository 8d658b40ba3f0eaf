#pragma once

#include "tailgen/creative/losses.hpp"
#include "tailgen/density/serialize.hpp"

namespace tailgen {

inline constexpr Eigen::Index kMinNegativeSamples = 3;

/// Fits a negative cluster from reduced samples (k x n). With n >= k+1 the covariance is the
/// regularized sample covariance; with fewer (but at least 3) it is shrunk to (trace/k) I.
inline NegativeCluster fit_negative_cluster_reduced(const Matrix& reduced, double strength, std::string id = {}) {
    if (!(strength >= 0.0)) throw ConfigError("negative cluster strength must be nonnegative");
    const Eigen::Index k = reduced.rows();
    const Eigen::Index n = reduced.cols();
    if (n < kMinNegativeSamples)
        throw FitError("negative cluster needs at least " + std::to_string(kMinNegativeSamples) + " samples, got " +
                       std::to_string(n));
    NegativeCluster c;
    c.strength = strength;
    c.id = std::move(id);
    if (n >= k + 1) {
        c.density = fit_gaussian(reduced, false);
        return c;
    }
    if (!reduced.allFinite()) throw FitError("negative cluster: non-finite sample");
    Vector mean = reduced.rowwise().mean();
    const Matrix centered = reduced.colwise() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(n) / static_cast<double>(k);
    if (!(var > 0.0)) throw FitError("negative cluster: zero variance");
    const double eps = 1e-6 * var;
    c.density = GaussianDensity(std::move(mean), Matrix::Identity(k, k) * (var + eps), eps, static_cast<std::size_t>(n));
    return c;
}

/// Projects labeled ambient embeddings (m x n) with `pca`, then fits as above.
inline NegativeCluster fit_negative_cluster(const Matrix& labeled, const PcaModel& pca, double strength,
                                            std::string id = {}) {
    return fit_negative_cluster_reduced(pca.project_columns(labeled), strength, std::move(id));
}

inline Json to_json(const NegativeCluster& c) {
    return Json{{"id", c.id}, {"strength", c.strength}, {"density", to_json(c.density)}};
}

inline NegativeCluster negative_cluster_from_json(const Json& j) {
    NegativeCluster c;
    c.id = j.value("id", std::string{});
    c.strength = j.at("strength").get<double>();
    if (!(c.strength >= 0.0)) throw ConfigError("negative cluster strength must be nonnegative");
    c.density = gaussian_from_json(j.at("density"));
    return c;
}

inline Json to_json(const NegativeClusterSet& set) {
    Json arr = Json::array();
    for (const auto& c : set) arr.push_back(to_json(c));
    return Json{{"kind", "negative_cluster_set"}, {"schema_version", kSchemaVersion}, {"clusters", arr}};
}

inline NegativeClusterSet negative_cluster_set_from_json(const Json& j) {
    detail::expect_kind(j, "negative_cluster_set");
    NegativeClusterSet set;
    for (const auto& c : j.at("clusters")) set.push_back(negative_cluster_from_json(c));
    return set;
}

}  // namespace tailgen
