#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tailgen {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a density or projection cannot be fitted to the given data.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for malformed configuration, specs, or persisted documents.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine produces or receives a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require_dims(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

}  // namespace tailgen
