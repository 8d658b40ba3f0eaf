#pragma once

// Versioned JSON documents for the density models.

#include "tailgen/density/gaussian.hpp"
#include "tailgen/density/kde.hpp"
#include "tailgen/density/pca.hpp"
#include "tailgen/tensor_io.hpp"

namespace tailgen {

namespace detail {
inline void expect_kind(const Json& j, const char* kind) {
    if (!j.is_object() || j.value("kind", "") != kind)
        throw ConfigError(std::string("expected a '") + kind + "' document");
    if (j.value("schema_version", 0) != kSchemaVersion)
        throw ConfigError(std::string("unsupported schema_version in '") + kind + "' document");
}
}  // namespace detail

inline Json to_json(const PcaModel& p) {
    return Json{{"kind", "pca"},
                {"schema_version", kSchemaVersion},
                {"dims", {{"ambient", p.ambient_dim()}, {"reduced", p.reduced_dim()}}},
                {"projection", tensor_to_json(p.projection)},
                {"center", tensor_to_json(p.center)},
                {"explained_variance", tensor_to_json(p.explained_variance)}};
}

inline PcaModel pca_from_json(const Json& j) {
    detail::expect_kind(j, "pca");
    PcaModel p;
    p.projection = tensor_from_json(j.at("projection"));
    p.center = vector_from_json(j.at("center"));
    p.explained_variance = vector_from_json(j.at("explained_variance"));
    if (p.projection.cols() != p.center.size() || p.projection.rows() != p.explained_variance.size())
        throw ConfigError("pca document has inconsistent shapes");
    return p;
}

inline Json to_json(const GaussianDensity& g) {
    return Json{{"kind", "gaussian"},
                {"schema_version", kSchemaVersion},
                {"dims", g.dim()},
                {"mean", tensor_to_json(g.mean())},
                {"covariance", tensor_to_json(g.covariance())},
                {"regularization", g.regularization()},
                {"fit_count", g.fit_count()}};
}

inline GaussianDensity gaussian_from_json(const Json& j) {
    detail::expect_kind(j, "gaussian");
    try {
        return GaussianDensity(vector_from_json(j.at("mean")), tensor_from_json(j.at("covariance")),
                               j.at("regularization").get<double>(), j.value("fit_count", std::size_t{0}));
    } catch (const FitError& e) {
        throw ConfigError(std::string("invalid gaussian document: ") + e.what());
    } catch (const DimensionError& e) {
        throw ConfigError(std::string("invalid gaussian document: ") + e.what());
    }
}

inline Json to_json(const KdeDensity& d) {
    return Json{{"kind", "kde"},
                {"schema_version", kSchemaVersion},
                {"dims", d.dim()},
                {"support", tensor_to_json(d.support)},
                {"bandwidth", d.bandwidth},
                {"fit_count", d.support.cols()}};
}

inline KdeDensity kde_from_json(const Json& j) {
    detail::expect_kind(j, "kde");
    KdeDensity d;
    d.support = tensor_from_json(j.at("support"));
    d.bandwidth = j.at("bandwidth").get<double>();
    if (!(d.bandwidth > 0.0)) throw ConfigError("kde bandwidth must be positive");
    return d;
}

}  // namespace tailgen
