#pragma once

#include "tailgen/autodiff/parameters.hpp"
#include "tailgen/rng.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace tailgen {

/// A scalar objective that also reports its analytic gradient.
using DifferentiableFn = std::function<std::pair<double, Gradients>(const ParameterSet&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates_checked = 0;
    std::string worst;  ///< "name[i,j]" of the worst coordinate
};

struct GradCheckOptions {
    double h = 1e-5;
    /// Above this many trainable scalars, only `sample_count` random coordinates are checked.
    std::size_t exhaustive_limit = 1000;
    std::size_t sample_count = 50;
    std::uint64_t seed = 0;
    /// Denominator floor: |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
};

/// Central-difference comparison of the analytic gradient of `fn` at `params`.
inline GradCheckResult grad_check(const DifferentiableFn& fn, ParameterSet params,
                                  const GradCheckOptions& opt = {}) {
    const auto [value, analytic] = fn(params);
    (void)value;

    struct Coord {
        std::size_t entry;
        Eigen::Index flat;
    };
    std::vector<Coord> all;
    const auto& entries = params.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        if (!entries[e].trainable) continue;
        for (Eigen::Index f = 0; f < entries[e].value.size(); ++f) all.push_back({e, f});
    }
    std::vector<Coord> chosen;
    if (all.size() > opt.exhaustive_limit) {
        CounterRng rng(opt.seed);
        std::vector<std::size_t> idx(all.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < opt.sample_count; ++i) {
            std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
            chosen.push_back(all[idx[i]]);
        }
    } else {
        chosen = std::move(all);
    }

    GradCheckResult result;
    for (const Coord& c : chosen) {
        const std::string& name = entries[c.entry].name;
        const Matrix original = params.get(name);
        Matrix bumped = original;
        double* slot = bumped.data() + c.flat;
        const double x0 = *slot;

        *slot = x0 + opt.h;
        params.set(name, bumped);
        const double up = fn(params).first;
        *slot = x0 - opt.h;
        params.set(name, bumped);
        const double down = fn(params).first;
        params.set(name, original);

        const double numeric = (up - down) / (2.0 * opt.h);
        auto it = analytic.find(name);
        const double a = it == analytic.end() ? 0.0 : it->second.data()[c.flat];
        const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
        const double err = std::abs(a - numeric) / denom;
        ++result.coordinates_checked;
        if (result.worst.empty() || err > result.max_rel_error) {
            result.max_rel_error = err;
            const Eigen::Index r = c.flat % original.rows();
            const Eigen::Index col = c.flat / original.rows();
            result.worst = name + "[" + std::to_string(r) + "," + std::to_string(col) + "]";
        }
    }
    return result;
}

}  // namespace tailgen
