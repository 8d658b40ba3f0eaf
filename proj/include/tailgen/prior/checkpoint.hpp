#pragma once

#include "tailgen/autodiff/parameters.hpp"
#include "tailgen/prior/concept.hpp"
#include "tailgen/prior/denoiser.hpp"
#include "tailgen/prior/schedule.hpp"
#include "tailgen/tensor_io.hpp"

namespace tailgen {

/// Trained prior plus everything needed to sample from it again.
struct PriorCheckpoint {
    DenoiserNet net;
    NoiseSchedule schedule;
    ConceptSpec concept_spec;
    Vector token;  ///< base condition the prior was trained under
    std::uint64_t concept_seed = 0;
    int train_steps = 0;
};

inline Json to_json(const PriorCheckpoint& c) {
    Json hidden = Json::array();
    for (int h : c.net.dims.hidden) hidden.push_back(h);
    return Json{{"kind", "prior_checkpoint"},
                {"schema_version", kSchemaVersion},
                {"dims",
                 {{"ambient", c.net.dims.ambient},
                  {"cond", c.net.dims.cond},
                  {"time_embed", c.net.dims.time_embed},
                  {"hidden", hidden}}},
                {"schedule", {{"train_steps", c.schedule.train_steps()}, {"betas", tensor_to_json(Vector(Eigen::Map<const Vector>(c.schedule.betas.data(), static_cast<Eigen::Index>(c.schedule.betas.size()))))}}},
                {"net", to_json(c.net.params)},
                {"concept", to_json(c.concept_spec)},
                {"concept_seed", c.concept_seed},
                {"token", tensor_to_json(c.token)},
                {"train_steps", c.train_steps}};
}

inline PriorCheckpoint checkpoint_from_json(const Json& j) {
    if (!j.is_object() || j.value("kind", "") != "prior_checkpoint") throw ConfigError("expected a 'prior_checkpoint' document");
    if (j.value("schema_version", 0) != kSchemaVersion) throw ConfigError("unsupported checkpoint schema_version");
    PriorCheckpoint c;
    const auto& d = j.at("dims");
    c.net.dims.ambient = d.at("ambient").get<int>();
    c.net.dims.cond = d.at("cond").get<int>();
    c.net.dims.time_embed = d.at("time_embed").get<int>();
    c.net.dims.hidden = d.at("hidden").get<std::vector<int>>();
    c.net.params = parameter_set_from_json(j.at("net"));
    const Vector betas = vector_from_json(j.at("schedule").at("betas"));
    c.schedule = NoiseSchedule::from_betas(std::vector<double>(betas.data(), betas.data() + betas.size()));
    c.concept_spec = concept_spec_from_json(j.at("concept"));
    c.concept_seed = j.value("concept_seed", std::uint64_t{0});
    c.token = vector_from_json(j.at("token"));
    c.train_steps = j.value("train_steps", 0);
    for (int l = 0; l < c.net.dims.layer_count(); ++l) {
        if (!c.net.params.contains(DenoiserNet::weight_name(l)) || !c.net.params.contains(DenoiserNet::bias_name(l)))
            throw ConfigError("checkpoint is missing layer " + std::to_string(l));
    }
    require_dims(c.token.size(), c.net.dims.cond, "checkpoint token");
    return c;
}

}  // namespace tailgen
