#pragma once

#include "tailgen/prior/concept.hpp"
#include "tailgen/tensor_io.hpp"

#include <memory>
#include <string>

namespace tailgen {

/// Discrete "is this still the concept?" judgement. Implementations see only the embedding, never
/// any loss value.
class ValidityOracle {
public:
    virtual ~ValidityOracle() = default;
    virtual std::string id() const = 0;
    virtual bool accepts(const Vector& e) const = 0;
    virtual Json describe() const { return Json{{"id", id()}}; }
};

/// Accepts iff the embedding lies within Mahalanobis radius R of some concept mixture component.
class ConceptRegionOracle final : public ValidityOracle {
public:
    ConceptRegionOracle(const ConceptDataset& dataset, double radius) : concept_(&dataset), radius_(radius) {
        if (!(radius > 0.0)) throw ConfigError("oracle radius must be positive");
    }
    explicit ConceptRegionOracle(const ConceptDataset& dataset)
        : ConceptRegionOracle(dataset, dataset.spec().validity_radius) {}

    std::string id() const override { return "concept-region"; }
    bool accepts(const Vector& e) const override {
        if (!e.allFinite()) return false;
        return concept_->min_component_mahalanobis(e) <= radius_;
    }
    Json describe() const override { return Json{{"id", id()}, {"radius", radius_}}; }
    double radius() const { return radius_; }

private:
    const ConceptDataset* concept_;
    double radius_;
};

class AlwaysPassOracle final : public ValidityOracle {
public:
    std::string id() const override { return "always-pass"; }
    bool accepts(const Vector&) const override { return true; }
};

enum class Validity { Pass, Fail, Skipped };

inline const char* to_string(Validity v) {
    switch (v) {
        case Validity::Pass: return "pass";
        case Validity::Fail: return "fail";
        case Validity::Skipped: return "skipped";
    }
    return "?";
}

inline Validity validity_from_string(const std::string& s) {
    if (s == "pass") return Validity::Pass;
    if (s == "fail") return Validity::Fail;
    if (s == "skipped") return Validity::Skipped;
    throw ConfigError("unknown validity '" + s + "'");
}

/// Consults the oracle only on iterations that are multiples of `interval`.
inline Validity validity_check(const ValidityOracle& oracle, const Vector& e, int iteration, int interval) {
    if (interval < 1) throw ConfigError("checker interval must be at least 1");
    if (iteration % interval != 0) return Validity::Skipped;
    return oracle.accepts(e) ? Validity::Pass : Validity::Fail;
}

}  // namespace tailgen
