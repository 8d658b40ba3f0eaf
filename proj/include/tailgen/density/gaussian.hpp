#pragma once

#include "tailgen/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace tailgen {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

/// Multivariate normal density with cached precision and log-determinant.
class GaussianDensity {
public:
    GaussianDensity() = default;

    /// Throws FitError when `covariance` is not symmetric positive definite.
    GaussianDensity(Vector mean, Matrix covariance, double regularization = 0.0,
                    std::size_t fit_count = 0)
        : mean_(std::move(mean)),
          covariance_(std::move(covariance)),
          regularization_(regularization),
          fit_count_(fit_count) {
        require_dims(covariance_.rows(), mean_.size(), "GaussianDensity covariance rows");
        require_dims(covariance_.cols(), mean_.size(), "GaussianDensity covariance cols");
        if (!mean_.allFinite() || !covariance_.allFinite())
            throw FitError("GaussianDensity: non-finite parameters");
        if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-10)
            throw FitError("GaussianDensity: covariance is not symmetric");
        Eigen::LLT<Matrix> llt(covariance_);
        if (llt.info() != Eigen::Success)
            throw FitError("GaussianDensity: covariance is not positive definite");
        const Vector diag = llt.matrixL().toDenseMatrix().diagonal();
        if ((diag.array() <= 0.0).any()) throw FitError("GaussianDensity: singular covariance");
        log_det_ = 2.0 * diag.array().log().sum();
        precision_ = llt.solve(Matrix::Identity(dim(), dim()));
        precision_ = 0.5 * (precision_ + precision_.transpose());
        if (!std::isfinite(log_det_) || !precision_.allFinite())
            throw FitError("GaussianDensity: singular covariance");
    }

    Eigen::Index dim() const { return mean_.size(); }
    const Vector& mean() const { return mean_; }
    const Matrix& covariance() const { return covariance_; }
    const Matrix& precision() const { return precision_; }
    double log_det() const { return log_det_; }
    double regularization() const { return regularization_; }
    std::size_t fit_count() const { return fit_count_; }

    /// -(k/2) log 2pi - (1/2) log det Sigma.
    double log_normalizer() const { return -0.5 * static_cast<double>(dim()) * kLogTwoPi - 0.5 * log_det_; }

    double mahalanobis_squared(const Vector& x) const {
        check(x);
        const Vector d = x - mean_;
        return std::max(0.0, d.dot(precision_ * d));
    }

    double mahalanobis(const Vector& x) const { return std::sqrt(mahalanobis_squared(x)); }

    double log_pdf(const Vector& x) const { return log_normalizer() - 0.5 * mahalanobis_squared(x); }

    /// -Sigma^{-1} (x - mean)
    Vector log_pdf_grad(const Vector& x) const {
        check(x);
        return -(precision_ * (x - mean_));
    }

private:
    void check(const Vector& x) const {
        require_dims(x.size(), dim(), "GaussianDensity");
        if (!x.allFinite()) throw NumericError("GaussianDensity: non-finite input");
    }

    Vector mean_;
    Matrix covariance_;
    Matrix precision_;
    double log_det_ = 0.0;
    double regularization_ = 0.0;
    std::size_t fit_count_ = 0;
};

/// Maximum-likelihood Gaussian over reduced samples (one per column).
///
/// With `zero_mean` the mean is pinned to the origin and the covariance is the raw second moment.
/// The covariance is regularized by eps*I with eps = 1e-6 * trace / k.
inline GaussianDensity fit_gaussian(const Matrix& samples, bool zero_mean) {
    const Eigen::Index k = samples.rows();
    const Eigen::Index n = samples.cols();
    if (k == 0) throw FitError("fit_gaussian: zero-dimensional samples");
    if (n < k + 1) throw FitError("fit_gaussian: need at least k+1 samples");
    if (!samples.allFinite()) throw FitError("fit_gaussian: non-finite sample");

    Vector mean = zero_mean ? Vector::Zero(k) : Vector(samples.rowwise().mean());
    const Matrix centered = samples.colwise() - mean;
    Matrix cov = (centered * centered.transpose()) / static_cast<double>(n);
    cov = 0.5 * (cov + cov.transpose());
    const double eps = 1e-6 * cov.trace() / static_cast<double>(k);
    cov.diagonal().array() += eps;
    if (!(eps > 0.0)) throw FitError("fit_gaussian: singular covariance (zero variance)");
    return GaussianDensity(std::move(mean), std::move(cov), eps, static_cast<std::size_t>(n));
}

inline GaussianDensity fit_gaussian(std::span<const Vector> samples, bool zero_mean) {
    if (samples.empty()) throw FitError("fit_gaussian: empty sample set");
    Matrix block(samples.front().size(), static_cast<Eigen::Index>(samples.size()));
    for (std::size_t j = 0; j < samples.size(); ++j) {
        require_dims(samples[j].size(), block.rows(), "fit_gaussian");
        block.col(static_cast<Eigen::Index>(j)) = samples[j];
    }
    return fit_gaussian(block, zero_mean);
}

/// Percentage of reference samples that are strictly less probable than `x` under `g`.
/// 100 at the mode (minus ties), 0 beyond the least probable reference point.
inline double likelihood_percentile(const GaussianDensity& g, const Vector& x, const Matrix& reference) {
    if (reference.cols() == 0) throw DimensionError("likelihood_percentile: empty reference set");
    const double lx = g.log_pdf(x);
    std::size_t below = 0;
    for (Eigen::Index j = 0; j < reference.cols(); ++j) {
        if (g.log_pdf(reference.col(j)) < lx) ++below;
    }
    return 100.0 * static_cast<double>(below) / static_cast<double>(reference.cols());
}

/// Sorted reference log-densities for repeated percentile queries against one reference set.
class PercentileTable {
public:
    PercentileTable(const GaussianDensity& g, const Matrix& reference) {
        if (reference.cols() == 0) throw DimensionError("PercentileTable: empty reference set");
        sorted_.reserve(static_cast<std::size_t>(reference.cols()));
        for (Eigen::Index j = 0; j < reference.cols(); ++j) sorted_.push_back(g.log_pdf(reference.col(j)));
        std::sort(sorted_.begin(), sorted_.end());
    }

    /// Same value as likelihood_percentile for a query with log-density `log_density`.
    double percentile_of(double log_density) const {
        const auto below = std::lower_bound(sorted_.begin(), sorted_.end(), log_density) - sorted_.begin();
        return 100.0 * static_cast<double>(below) / static_cast<double>(sorted_.size());
    }

    std::size_t size() const { return sorted_.size(); }

private:
    std::vector<double> sorted_;
};

}  // namespace tailgen
