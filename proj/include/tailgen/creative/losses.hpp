#pragma once

// Creative, anchor and negative-cluster losses, in plain form and as graph builders.

#include "tailgen/autodiff/graph.hpp"
#include "tailgen/density/gaussian.hpp"
#include "tailgen/density/pca.hpp"

#include <limits>
#include <string>
#include <vector>

namespace tailgen {

/// Which loss drives the current update.
enum class Branch { Creative, Anchor };

/// Seed handling for the next iteration.
enum class SeedPolicy { NewSeed, SameSeed };

enum class NegativeMode {
    Repulsive,   ///< +alpha log G_neg: minimizing moves samples away from the cluster
    Attractive,  ///< -alpha log G_neg: minimizing pulls samples toward the cluster
};

inline const char* to_string(Branch b) { return b == Branch::Creative ? "creative" : "anchor"; }

inline Branch branch_from_string(const std::string& s) {
    if (s == "creative") return Branch::Creative;
    if (s == "anchor") return Branch::Anchor;
    throw ConfigError("unknown branch '" + s + "'");
}

inline const char* to_string(NegativeMode m) { return m == NegativeMode::Repulsive ? "repulsive" : "attractive"; }

inline NegativeMode negative_mode_from_string(const std::string& s) {
    if (s == "repulsive") return NegativeMode::Repulsive;
    if (s == "attractive") return NegativeMode::Attractive;
    throw ConfigError("unknown negative-cluster mode '" + s + "'");
}

struct NegativeCluster {
    GaussianDensity density;
    double strength = 1.0;
    std::string id;
};

using NegativeClusterSet = std::vector<NegativeCluster>;

/// log G(e~). Minimizing it pushes the reduced sample toward the tails of the baseline.
inline double creative_loss(const GaussianDensity& base, const Vector& reduced) { return base.log_pdf(reduced); }

inline Vector creative_loss_grad(const GaussianDensity& base, const Vector& reduced) { return base.log_pdf_grad(reduced); }

/// 1 - cos(e, anchor), in [0, 2].
inline double anchor_loss(const Vector& e, const Vector& anchor) {
    require_dims(e.size(), anchor.size(), "anchor_loss");
    const double ne = e.norm();
    const double na = anchor.norm();
    if (!(ne > 0.0)) throw NumericError("anchor_loss: embedding has zero norm");
    if (!(na > 0.0)) throw NumericError("anchor_loss: anchor has zero norm");
    return 1.0 - e.dot(anchor) / (ne * na);
}

inline Vector anchor_loss_grad(const Vector& e, const Vector& anchor) {
    const double ne = e.norm();
    const double na = anchor.norm();
    if (!(ne > 0.0)) throw NumericError("anchor_loss: embedding has zero norm");
    const double c = e.dot(anchor) / (ne * na);
    return -(anchor / (ne * na) - (c / (ne * ne)) * e);
}

inline double negative_sign(NegativeMode mode) { return mode == NegativeMode::Repulsive ? 1.0 : -1.0; }

inline double negative_loss(const NegativeClusterSet& clusters, const Vector& reduced,
                            NegativeMode mode = NegativeMode::Repulsive) {
    double total = 0.0;
    for (const auto& c : clusters) {
        if (c.strength == 0.0) continue;
        total += negative_sign(mode) * c.strength * c.density.log_pdf(reduced);
    }
    return total;
}

inline Vector negative_loss_grad(const NegativeClusterSet& clusters, const Vector& reduced,
                                 NegativeMode mode = NegativeMode::Repulsive) {
    Vector g = Vector::Zero(reduced.size());
    for (const auto& c : clusters) {
        if (c.strength == 0.0) continue;
        g += negative_sign(mode) * c.strength * c.density.log_pdf_grad(reduced);
    }
    return g;
}

/// Creative branch: creative + negative. Anchor branch: anchor alone.
inline double total_loss(double creative, double negative, double anchor, Branch branch) {
    return branch == Branch::Creative ? creative + negative : anchor;
}

/// Threshold rule for the dynamic strategy. A tie counts as a violation.
inline std::pair<Branch, SeedPolicy> dynamic_loss_select(double anchor_value, double threshold) {
    if (anchor_value < threshold) return {Branch::Creative, SeedPolicy::NewSeed};
    return {Branch::Anchor, SeedPolicy::SameSeed};
}

// ---- graph builders -------------------------------------------------------------------------

/// W (e - mu0) as graph nodes.
inline NodeId project_node(Graph& g, NodeId e, const PcaModel& pca) {
    return g.matmul(g.constant(pca.projection), g.sub(e, g.constant(pca.center)));
}

/// log N(x | mean, Sigma) as graph nodes.
inline NodeId gaussian_log_pdf_node(Graph& g, NodeId x, const GaussianDensity& density) {
    NodeId d = g.sub(x, g.constant(density.mean()));
    NodeId q = g.dot(d, g.matmul(g.constant(density.precision()), d));
    return g.shift(g.scale(q, -0.5), density.log_normalizer());
}

inline NodeId anchor_loss_node(Graph& g, NodeId e, const Vector& anchor) {
    return g.shift(g.scale(g.cosine(e, g.constant(anchor)), -1.0), 1.0);
}

inline NodeId negative_loss_node(Graph& g, NodeId reduced, const NegativeClusterSet& clusters, NegativeMode mode) {
    NodeId total = g.constant(Matrix::Zero(1, 1));
    for (const auto& c : clusters) {
        if (c.strength == 0.0) continue;
        total = g.add(total, g.scale(gaussian_log_pdf_node(g, reduced, c.density), negative_sign(mode) * c.strength));
    }
    return total;
}

}  // namespace tailgen
