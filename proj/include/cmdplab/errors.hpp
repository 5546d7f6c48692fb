#pragma once

#include <stdexcept>
#include <string>

namespace cmdplab {

/// Raised when a model, policy, or run configuration fails validation.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when the union support graph of a model has more than one closed
/// communicating class, i.e. the chain is not unichain under any policy.
class MultipleRecurrentClasses : public std::runtime_error {
public:
    explicit MultipleRecurrentClasses(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when the occupancy-measure program has an empty feasible set.
class InfeasibleModel : public std::runtime_error {
public:
    explicit InfeasibleModel(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an iterate becomes NaN or infinite during optimization.
class NonFiniteUpdate : public std::runtime_error {
public:
    explicit NonFiniteUpdate(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a log-log regression is requested on non-positive data.
class DegenerateFit : public std::runtime_error {
public:
    explicit DegenerateFit(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cmdplab
