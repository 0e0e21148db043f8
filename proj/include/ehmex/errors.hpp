#pragma once

#include <stdexcept>
#include <string>

namespace ehmex {

// Error taxonomy used across the library. The CLI maps these to exit codes
// and machine-readable error JSON.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a selector or the simulator violates its own contract,
// e.g. an unaffordable exit was requested. Never silently clamped.
struct SimulationFault : std::runtime_error {
    explicit SimulationFault(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ehmex
