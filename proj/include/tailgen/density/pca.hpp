#pragma once

#include "tailgen/common.hpp"

#include <span>

namespace tailgen {

/// Linear projection onto the top-k principal directions of a sample set.
///
/// `projection` is k x m with orthonormal rows ordered by decreasing eigenvalue; `center` is the
/// fit-set mean. `explained_variance[i]` is eigenvalue i over the total variance.
struct PcaModel {
    Matrix projection;
    Vector center;
    Vector explained_variance;

    Eigen::Index ambient_dim() const { return center.size(); }
    Eigen::Index reduced_dim() const { return projection.rows(); }

    /// Reduced coordinates W (e - mu0).
    Vector project(const Vector& e) const {
        require_dims(e.size(), ambient_dim(), "project");
        return projection * (e - center);
    }

    /// Column-wise projection of an m x n block.
    Matrix project_columns(const Matrix& samples) const {
        require_dims(samples.rows(), ambient_dim(), "project_columns");
        return projection * (samples.colwise() - center);
    }

    /// Maps reduced coordinates back into the ambient space (least-squares inverse).
    Vector reconstruct(const Vector& reduced) const {
        require_dims(reduced.size(), reduced_dim(), "reconstruct");
        return center + projection.transpose() * reduced;
    }

    double explained_variance_total() const { return explained_variance.sum(); }
};

/// Fits PCA by eigendecomposition of the maximum-likelihood sample covariance.
///
/// `samples` holds one embedding per column (m x n). Each direction is sign-fixed so its first
/// nonzero coordinate is positive.
inline PcaModel fit_pca(const Matrix& samples, Eigen::Index k) {
    const Eigen::Index m = samples.rows();
    const Eigen::Index n = samples.cols();
    if (k <= 0) throw FitError("fit_pca: k must be positive");
    if (k > m) throw FitError("fit_pca: k exceeds the ambient dimension");
    if (n <= k) throw FitError("fit_pca: need more samples than components");
    if (!samples.allFinite()) throw FitError("fit_pca: non-finite sample");

    Vector mean = samples.rowwise().mean();
    Matrix centered = samples.colwise() - mean;
    Matrix cov = (centered * centered.transpose()) / static_cast<double>(n);
    const double total = cov.trace();
    if (!(total > 0.0)) throw FitError("fit_pca: zero total variance");

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw FitError("fit_pca: eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    PcaModel model;
    model.center = std::move(mean);
    model.projection.resize(k, m);
    model.explained_variance.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index src = m - 1 - i;
        Vector dir = eig.eigenvectors().col(src);
        dir.normalize();
        for (Eigen::Index c = 0; c < m; ++c) {
            if (std::abs(dir[c]) > 1e-12) {
                if (dir[c] < 0) dir = -dir;
                break;
            }
        }
        model.projection.row(i) = dir.transpose();
        model.explained_variance[i] = std::max(0.0, eig.eigenvalues()[src]) / total;
    }
    return model;
}

/// Convenience overload for a list of vectors.
inline PcaModel fit_pca(std::span<const Vector> samples, Eigen::Index k) {
    if (samples.empty()) throw FitError("fit_pca: empty sample set");
    Matrix block(samples.front().size(), static_cast<Eigen::Index>(samples.size()));
    for (std::size_t j = 0; j < samples.size(); ++j) {
        require_dims(samples[j].size(), block.rows(), "fit_pca");
        block.col(static_cast<Eigen::Index>(j)) = samples[j];
    }
    return fit_pca(block, k);
}

}  // namespace tailgen
