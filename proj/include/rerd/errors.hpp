#pragma once

#include <stdexcept>
#include <string>

namespace rerd {

/// An instance exceeds the enumerability guard (e.g. K^d too large).
struct resource_limit_error : std::runtime_error {
    explicit resource_limit_error(const std::string& what) : std::runtime_error(what) {}
};

/// Every candidate weight is zero / -inf; no selection is possible.
struct degenerate_weights_error : std::runtime_error {
    explicit degenerate_weights_error(const std::string& what) : std::runtime_error(what) {}
};

/// Experiment configuration failed validation (maps to CLI exit code 1).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace rerd
