#pragma once

#include "tailgen/common.hpp"
#include "tailgen/tensor_io.hpp"

#include <map>
#include <string>
#include <vector>

namespace tailgen {

/// Named dense tensors, each trainable or frozen. Names are unique and shapes fixed at insertion.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
        bool trainable = true;
    };

    void add(const std::string& name, Matrix value, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back({name, std::move(value), trainable});
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Matrix& get(const std::string& name) const { return entries_[lookup(name)].value; }

    /// Replaces the value of an existing tensor; the shape must not change.
    void set(const std::string& name, const Matrix& value) {
        Entry& e = entries_[lookup(name)];
        if (value.rows() != e.value.rows() || value.cols() != e.value.cols())
            throw DimensionError("parameter '" + name + "' cannot change shape");
        e.value = value;
    }

    bool trainable(const std::string& name) const { return entries_[lookup(name)].trainable; }
    void set_trainable(const std::string& name, bool flag) { entries_[lookup(name)].trainable = flag; }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

    /// Adds every entry of `other`; names must not collide.
    void merge(const ParameterSet& other) {
        for (const auto& e : other.entries_) add(e.name, e.value, e.trainable);
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

using Gradients = std::map<std::string, Matrix>;

inline double global_norm(const Gradients& grads) {
    double s = 0.0;
    for (const auto& [name, g] : grads) s += g.squaredNorm();
    return std::sqrt(s);
}

inline Json to_json(const ParameterSet& ps) {
    Json tensors = Json::array();
    for (const auto& e : ps.entries())
        tensors.push_back({{"name", e.name}, {"trainable", e.trainable}, {"tensor", tensor_to_json(e.value)}});
    return Json{{"kind", "parameter_set"}, {"schema_version", kSchemaVersion}, {"tensors", tensors}};
}

inline ParameterSet parameter_set_from_json(const Json& j) {
    if (!j.is_object() || j.value("kind", "") != "parameter_set")
        throw ConfigError("expected a 'parameter_set' document");
    ParameterSet ps;
    for (const auto& t : j.at("tensors"))
        ps.add(t.at("name").get<std::string>(), tensor_from_json(t.at("tensor")), t.value("trainable", true));
    return ps;
}

}  // namespace tailgen
