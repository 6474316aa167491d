#pragma once

#include <stdexcept>
#include <string>

namespace fedct {

// Error taxonomy. Callers that care about the failure class catch the
// concrete type; everything derives from std::runtime_error so generic
// handlers keep working.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Violated API contract (e.g. backward on a non-scalar, sgd_step without grads).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct PartitionError : std::runtime_error {
    explicit PartitionError(const std::string& what) : std::runtime_error(what) {}
};

// Runtime failure inside a protocol run (divergence, I/O, ...).
struct RunError : std::runtime_error {
    explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedct
