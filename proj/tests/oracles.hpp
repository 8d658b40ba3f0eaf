#pragma once

// Independent brute-force references used by the tests: none of them call into the library's
// density code, so an agreement is a genuine cross-check.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

/// Gauss-Jordan inverse with partial pivoting; also returns log|det|.
inline std::pair<Mat, double> invert(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    double logdet = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        if (a[p][c] == 0.0) throw std::runtime_error("singular");
        std::swap(a[p], a[c]);
        std::swap(inv[p], inv[c]);
        const double piv = a[c][c];
        logdet += std::log(std::abs(piv));
        for (std::size_t j = 0; j < n; ++j) {
            a[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[c][j];
                inv[r][j] -= f * inv[c][j];
            }
        }
    }
    return {inv, logdet};
}

inline double quad(const Mat& p, const Vec& d) {
    double q = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j) q += d[i] * p[i][j] * d[j];
    return q;
}

inline Vec diff(const Vec& x, const Vec& mean) {
    Vec d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - mean[i];
    return d;
}

inline double gaussian_log_pdf(const Vec& mean, const Mat& cov, const Vec& x) {
    const auto [prec, logdet] = invert(cov);
    const double k = static_cast<double>(x.size());
    return -0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad(prec, diff(x, mean));
}

inline Vec gaussian_log_pdf_grad(const Vec& mean, const Mat& cov, const Vec& x) {
    const auto [prec, logdet] = invert(cov);
    const Vec d = diff(x, mean);
    Vec g(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) g[i] -= prec[i][j] * d[j];
    return g;
}

inline double mahalanobis(const Vec& mean, const Mat& cov, const Vec& x) {
    return std::sqrt(quad(invert(cov).first, diff(x, mean)));
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvectors are the columns of `vectors`.
struct EigenPairs {
    Vec values;
    Mat vectors;
};

inline EigenPairs jacobi(Mat a) {
    const std::size_t n = a.size();
    Mat v(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    EigenPairs e;
    e.vectors = v;
    for (std::size_t i = 0; i < n; ++i) e.values.push_back(a[i][i]);
    return e;
}

/// Maximum-likelihood covariance of row-major samples (one sample per entry).
inline Mat covariance(const std::vector<Vec>& xs, Vec* mean_out = nullptr) {
    const std::size_t m = xs.front().size();
    Vec mean(m, 0.0);
    for (const auto& x : xs)
        for (std::size_t i = 0; i < m; ++i) mean[i] += x[i] / static_cast<double>(xs.size());
    Mat c(m, Vec(m, 0.0));
    for (const auto& x : xs)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) c[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]) / static_cast<double>(xs.size());
    if (mean_out) *mean_out = mean;
    return c;
}

}  // namespace oracle
