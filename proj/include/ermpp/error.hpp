#pragma once

#include <stdexcept>
#include <string>

namespace ermpp {

// Base of all library errors; callers that do not care about the category
// can catch this one.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range label or sample index.
struct IndexError : Error {
    using Error::Error;
};

// Violated operation precondition (batch too small, update before burn-in, ...).
struct ContractError : Error {
    using Error::Error;
};

// Mismatched parameter key sets between two model states.
struct ArchitectureError : Error {
    using Error::Error;
};

// Invalid experiment configuration (parse errors carry file:line anchors).
struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint/dataset file problems: bad magic, version, truncation, checksum.
struct FileFormatError : Error {
    using Error::Error;
};

}  // namespace ermpp
