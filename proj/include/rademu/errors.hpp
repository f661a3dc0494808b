#pragma once

#include <stdexcept>
#include <string>

namespace rademu {

// Error taxonomy maps onto CLI exit codes (see FORMATS.md).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PlanningError : std::runtime_error {
    explicit PlanningError(const std::string& msg, double achieved = 0.0)
        : std::runtime_error(msg), achieved_fraction(achieved) {}
    double achieved_fraction;
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rademu
