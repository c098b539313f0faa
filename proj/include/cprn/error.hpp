#pragma once

#include <stdexcept>
#include <string>

namespace cprn {

/// Shape or extent mismatch between operands.
class DimError : public std::runtime_error {
public:
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration: unknown parameter name, bad variant string, bad config field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid value at runtime: non-binary ground truth, empty evaluation, NaN loss.
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cprn
