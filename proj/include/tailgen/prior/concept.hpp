#pragma once

#include "tailgen/common.hpp"
#include "tailgen/rng.hpp"
#include "tailgen/tensor_io.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace tailgen {

struct MixtureComponent {
    Vector mean;
    Matrix covariance;
    double weight = 1.0;
};

/// Synthetic concept: a Gaussian mixture over the ambient embedding space plus the concept's
/// default token vector and validity-region radius.
struct ConceptSpec {
    std::string concept_id = "concept";
    std::vector<MixtureComponent> components;
    std::optional<Vector> anchor;
    std::optional<Vector> token;
    double validity_radius = 8.0;
    int token_dim = 8;
};

/// Default 4-component mixture in m = 16 around a common offset. Each component is elongated along
/// the offset direction by `radial_stdev`, so membership depends mostly on direction, not scale.
inline ConceptSpec default_concept_spec() {
    constexpr double radial_stdev = 1.5;
    constexpr int m = 16;
    ConceptSpec spec;
    spec.concept_id = "toy-subject";
    const Vector center = Vector::Constant(m, 4.0 / std::sqrt(static_cast<double>(m)));
    Vector stdev(m);
    for (int i = 0; i < m; ++i) stdev[i] = 0.5 * std::pow(0.95, i);
    const Vector dir = center.normalized();
    const Matrix cov = Matrix(stdev.array().square().matrix().asDiagonal()) + radial_stdev * radial_stdev * dir * dir.transpose();
    for (int c = 0; c < 4; ++c) {
        Vector offset = Vector::Zero(m);
        offset[c / 2] = (c % 2 == 0 ? 1.2 : -1.2);
        spec.components.push_back({center + offset, cov, 0.25});
    }
    return spec;
}

/// Validated, sampleable concept distribution.
class ConceptDataset {
public:
    ConceptDataset(ConceptSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
        if (spec_.components.empty()) throw ConfigError("concept spec has no mixture components");
        const Eigen::Index m = spec_.components.front().mean.size();
        if (m == 0) throw ConfigError("concept spec has zero dimension");
        double wsum = 0.0;
        for (const auto& c : spec_.components) {
            if (c.mean.size() != m || c.covariance.rows() != m || c.covariance.cols() != m)
                throw ConfigError("concept spec components disagree on dimension");
            if (!(c.weight > 0.0)) throw ConfigError("mixture weights must be positive");
            wsum += c.weight;
            if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
                throw ConfigError("mixture covariance is not symmetric");
            Eigen::LLT<Matrix> llt(c.covariance);
            if (llt.info() != Eigen::Success) throw ConfigError("mixture covariance is not positive definite");
            chol_.push_back(llt.matrixL());
            precision_.push_back(llt.solve(Matrix::Identity(m, m)));
        }
        if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");

        mixture_mean_ = Vector::Zero(m);
        for (const auto& c : spec_.components) mixture_mean_ += c.weight * c.mean;

        const Vector raw_anchor = spec_.anchor ? *spec_.anchor : mixture_mean_;
        require_dims(raw_anchor.size(), m, "concept anchor");
        const double n = raw_anchor.norm();
        if (!(n > 1e-9 * (1.0 + mixture_spread()))) {
            throw ConfigError(spec_.anchor ? "concept anchor must be nonzero"
                                           : "mixture mean is zero; the anchor is undefined and must be supplied explicitly");
        }
        anchor_ = raw_anchor / n;

        if (spec_.token) {
            token_ = *spec_.token;
        } else {
            CounterRng rng(substream(fnv1a(spec_.concept_id), "token"));
            token_ = rng.normal_vector(spec_.token_dim);
        }
        if (!token_.allFinite() || token_.size() == 0) throw ConfigError("concept token must be finite and nonempty");
        if (!(spec_.validity_radius > 0.0)) throw ConfigError("validity radius must be positive");
    }

    const ConceptSpec& spec() const { return spec_; }
    Eigen::Index dim() const { return mixture_mean_.size(); }
    const Vector& anchor() const { return anchor_; }
    const Vector& mixture_mean() const { return mixture_mean_; }
    const Vector& token() const { return token_; }
    std::size_t component_count() const { return spec_.components.size(); }
    const Matrix& component_precision(std::size_t c) const { return precision_[c]; }

    /// Draws n samples (m x n) from stream `stream` of this dataset's seed.
    Matrix sample(Eigen::Index n, std::uint64_t stream) const {
        CounterRng rng(derive_seed(seed_, stream));
        Matrix out(dim(), n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double u = rng.uniform();
            std::size_t c = 0;
            double acc = spec_.components[0].weight;
            while (u > acc && c + 1 < spec_.components.size()) acc += spec_.components[++c].weight;
            out.col(j) = spec_.components[c].mean + chol_[c] * rng.normal_vector(dim());
        }
        return out;
    }

    /// Smallest Mahalanobis distance from `e` to any component.
    double min_component_mahalanobis(const Vector& e) const {
        require_dims(e.size(), dim(), "min_component_mahalanobis");
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < spec_.components.size(); ++c) {
            const Vector d = e - spec_.components[c].mean;
            best = std::min(best, std::sqrt(std::max(0.0, d.dot(precision_[c] * d))));
        }
        return best;
    }

private:
    double mixture_spread() const {
        double s = 0.0;
        for (const auto& c : spec_.components) s = std::max(s, c.mean.norm());
        return s;
    }

    ConceptSpec spec_;
    std::uint64_t seed_;
    std::vector<Matrix> chol_;
    std::vector<Matrix> precision_;
    Vector mixture_mean_;
    Vector anchor_;
    Vector token_;
};

inline ConceptDataset make_concept(ConceptSpec spec, std::uint64_t seed) {
    return ConceptDataset(std::move(spec), seed);
}

namespace detail {
inline Json vec_to_array(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vector array_to_vec(const Json& a, const char* what) {
    if (!a.is_array()) throw ConfigError(std::string(what) + " must be an array of numbers");
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw ConfigError(std::string(what) + " must be an array of numbers");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}
}  // namespace detail

/// Concept specs are hand-edited documents, so numbers are plain JSON arrays here.
/// A component gives either "cov" (row arrays) or "cov_diag".
inline Json to_json(const ConceptSpec& s) {
    Json comps = Json::array();
    for (const auto& c : s.components) {
        Json rows = Json::array();
        for (Eigen::Index i = 0; i < c.covariance.rows(); ++i) rows.push_back(detail::vec_to_array(c.covariance.row(i).transpose()));
        comps.push_back({{"mean", detail::vec_to_array(c.mean)}, {"cov", rows}, {"weight", c.weight}});
    }
    Json j{{"kind", "concept_spec"},
           {"schema_version", kSchemaVersion},
           {"concept_id", s.concept_id},
           {"components", comps},
           {"validity_radius", s.validity_radius},
           {"token_dim", s.token_dim}};
    if (s.anchor) j["anchor"] = detail::vec_to_array(*s.anchor);
    if (s.token) j["token"] = detail::vec_to_array(*s.token);
    return j;
}

inline ConceptSpec concept_spec_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("concept spec must be a JSON object");
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) throw ConfigError("unsupported concept spec schema_version");
    ConceptSpec s;
    s.concept_id = j.value("concept_id", std::string("concept"));
    s.validity_radius = j.value("validity_radius", 8.0);
    s.token_dim = j.value("token_dim", 8);
    if (!j.contains("components") || !j.at("components").is_array()) throw ConfigError("concept spec needs a components array");
    for (const auto& c : j.at("components")) {
        MixtureComponent comp;
        comp.mean = detail::array_to_vec(c.at("mean"), "component mean");
        const auto m = comp.mean.size();
        if (c.contains("cov")) {
            const auto& rows = c.at("cov");
            if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != m) throw ConfigError("component cov must be m x m");
            comp.covariance.resize(m, m);
            for (Eigen::Index i = 0; i < m; ++i) {
                Vector r = detail::array_to_vec(rows[static_cast<std::size_t>(i)], "component cov row");
                if (r.size() != m) throw ConfigError("component cov must be m x m");
                comp.covariance.row(i) = r.transpose();
            }
        } else if (c.contains("cov_diag")) {
            Vector d = detail::array_to_vec(c.at("cov_diag"), "component cov_diag");
            if (d.size() != m) throw ConfigError("component cov_diag must have length m");
            comp.covariance = d.asDiagonal();
        } else {
            throw ConfigError("component needs cov or cov_diag");
        }
        comp.weight = c.value("weight", 1.0);
        s.components.push_back(std::move(comp));
    }
    if (j.contains("anchor")) s.anchor = detail::array_to_vec(j.at("anchor"), "anchor");
    if (j.contains("token")) {
        s.token = detail::array_to_vec(j.at("token"), "token");
        s.token_dim = static_cast<int>(s.token->size());
    }
    return s;
}

}  // namespace tailgen
