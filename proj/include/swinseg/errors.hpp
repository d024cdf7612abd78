#pragma once

#include <stdexcept>
#include <string>

namespace swinseg {

// Base class for all recoverable engine errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreements (matmul inner dims, window divisibility, ...).
struct DimError : Error {
    using Error::Error;
};

// Malformed on-disk data (NPY magic, ZIP structure, truncated payloads).
struct FormatError : Error {
    using Error::Error;
};

// API preconditions violated by the caller (non-scalar loss, bad slice index).
struct ContractError : Error {
    using Error::Error;
};

// Case-level validation problems (degenerate boxes, shape mismatches).
struct ValidationError : Error {
    using Error::Error;
};

// Checkpoint does not match the model configuration.
struct CheckpointError : Error {
    using Error::Error;
};

// Missing or inconsistent training data (teacher entry absent, empty dataset).
struct DataError : Error {
    using Error::Error;
};

// No admissible sample exists (e.g. no slice with non-empty ground truth).
struct SamplingError : Error {
    using Error::Error;
};

// NaN/Inf escaped a computation.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace swinseg
