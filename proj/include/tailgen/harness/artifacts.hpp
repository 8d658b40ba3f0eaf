#pragma once

#include "tailgen/density/serialize.hpp"
#include "tailgen/harness/files.hpp"
#include "tailgen/prior/checkpoint.hpp"

namespace tailgen {

/// Output of the sampling stage: the prior samples and the models fitted to them.
struct BaselineArtifact {
    Matrix samples;  ///< m x N
    PcaModel pca;
    GaussianDensity gaussian;
    std::string checkpoint_digest;
    int sample_steps = 5;

    Matrix reduced() const { return pca.project_columns(samples); }
};

inline Json to_json(const BaselineArtifact& b) {
    return Json{{"kind", "baseline"},
                {"schema_version", kSchemaVersion},
                {"checkpoint_digest", b.checkpoint_digest},
                {"sample_steps", b.sample_steps},
                {"explained_variance_total", b.pca.explained_variance_total()},
                {"samples", tensor_to_json(b.samples)},
                {"pca", to_json(b.pca)},
                {"gaussian", to_json(b.gaussian)}};
}

inline BaselineArtifact baseline_from_json(const Json& j) {
    detail::expect_kind(j, "baseline");
    BaselineArtifact b;
    b.samples = tensor_from_json(j.at("samples"));
    b.pca = pca_from_json(j.at("pca"));
    b.gaussian = gaussian_from_json(j.at("gaussian"));
    b.checkpoint_digest = j.value("checkpoint_digest", std::string{});
    b.sample_steps = j.value("sample_steps", 5);
    require_dims(b.samples.rows(), b.pca.ambient_dim(), "baseline samples");
    require_dims(b.gaussian.dim(), b.pca.reduced_dim(), "baseline gaussian");
    return b;
}

inline PriorCheckpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("prior checkpoint '" + path.string() + "' does not exist");
    return checkpoint_from_json(read_json_file(path));
}

inline BaselineArtifact load_baseline(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("baseline artifact '" + path.string() + "' does not exist");
    return baseline_from_json(read_json_file(path));
}

}  // namespace tailgen
