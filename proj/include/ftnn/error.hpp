#pragma once

#include <stdexcept>
#include <string>

namespace ftnn {

/// Shape or width disagreement between tensors or layers.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Argument outside its documented domain (bad rate, empty dataset, ...).
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated input file.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Broken API contract (stale cache, wrong call order).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Filesystem or serialization failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ftnn
