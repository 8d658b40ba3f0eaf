#pragma once

#include "tailgen/common.hpp"
#include "tailgen/density/gaussian.hpp"

#include <cmath>
#include <string>

namespace tailgen {

/// Kernel density estimates are only trusted in very low dimension.
inline constexpr Eigen::Index kKdeMaxDim = 5;

struct Bandwidth {
    enum class Rule { Scott, Fixed };
    Rule rule = Rule::Scott;
    double value = 0.0;  ///< used when rule == Fixed

    static Bandwidth scott() { return {}; }
    static Bandwidth fixed(double h) { return {Rule::Fixed, h}; }
};

/// Isotropic Gaussian-kernel mixture over the leading coordinates of reduced samples.
struct KdeDensity {
    Matrix support;  ///< k' x n, one support point per column
    double bandwidth = 1.0;

    Eigen::Index dim() const { return support.rows(); }

    double log_pdf(const Vector& point) const {
        require_dims(point.size(), dim(), "kde_log_pdf");
        if (!point.allFinite()) throw NumericError("kde_log_pdf: non-finite input");
        const Eigen::Index n = support.cols();
        const double inv_two_h2 = 0.5 / (bandwidth * bandwidth);
        Eigen::ArrayXd expo(n);
        for (Eigen::Index j = 0; j < n; ++j) expo[j] = -(support.col(j) - point).squaredNorm() * inv_two_h2;
        const double top = expo.maxCoeff();
        const double lse = top + std::log((expo - top).exp().sum());
        const double d = static_cast<double>(dim());
        return lse - std::log(static_cast<double>(n)) - 0.5 * d * (kLogTwoPi + 2.0 * std::log(bandwidth));
    }
};

/// Keeps the first `target_dim` reduced coordinates (PCA order) and places a kernel on each sample.
/// Scott's rule: h = sigma_bar * n^(-1/(d+4)), sigma_bar the RMS per-coordinate std deviation.
inline KdeDensity fit_kde(const Matrix& reduced_samples, Eigen::Index target_dim,
                          Bandwidth rule = Bandwidth::scott()) {
    if (target_dim < 1) throw FitError("fit_kde: target dimension must be positive");
    if (target_dim > kKdeMaxDim) {
        throw FitError("fit_kde: target dimension " + std::to_string(target_dim) +
                       " exceeds the KDE dimensionality limit of " + std::to_string(kKdeMaxDim) +
                       "; reduce the PCA dimensionality further");
    }
    if (target_dim > reduced_samples.rows()) throw FitError("fit_kde: target dimension exceeds sample dimension");
    const Eigen::Index n = reduced_samples.cols();
    if (n < 1) throw FitError("fit_kde: empty sample set");
    if (!reduced_samples.allFinite()) throw FitError("fit_kde: non-finite sample");

    KdeDensity kde;
    kde.support = reduced_samples.topRows(target_dim);
    if (rule.rule == Bandwidth::Rule::Fixed) {
        kde.bandwidth = rule.value;
    } else {
        if (n < 2) throw FitError("fit_kde: Scott's rule needs at least two samples");
        const Matrix centered = kde.support.colwise() - kde.support.rowwise().mean();
        const double mean_var = centered.squaredNorm() / static_cast<double>(n - 1) / static_cast<double>(target_dim);
        kde.bandwidth = std::sqrt(mean_var) *
                        std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(target_dim) + 4.0));
    }
    if (!(kde.bandwidth > 0.0) || !std::isfinite(kde.bandwidth)) throw FitError("fit_kde: bandwidth must be positive");
    return kde;
}

}  // namespace tailgen
