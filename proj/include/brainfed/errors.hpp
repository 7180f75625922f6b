#pragma once

#include <stdexcept>
#include <string>

namespace brainfed {

// Shape/dimension mismatches between tensors or parameter sets.
struct dim_error : std::invalid_argument {
    explicit dim_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Violated call contracts: stale caches, empty batch lists, bad arguments.
struct contract_error : std::logic_error {
    explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

// Unparseable or corrupt on-disk artifacts (checkpoints, datasets, logs).
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically invalid inputs, e.g. rows that cannot be normalized.
struct value_error : std::invalid_argument {
    explicit value_error(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace brainfed
