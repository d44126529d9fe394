#pragma once

#include <stdexcept>
#include <string>

namespace ssp {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed files, manifests or serialized payloads (CLI exit code 2).
struct DataError : Error {
    using Error::Error;
};

/// Violated operation precondition or type invariant (CLI exit code 3).
struct ContractError : Error {
    using Error::Error;
};

} // namespace ssp
