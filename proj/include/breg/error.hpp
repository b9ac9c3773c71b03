#pragma once

#include <stdexcept>
#include <string>

namespace breg {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller violated an API precondition (shape mismatch, bad label, ...).
struct ContractError : Error {
    using Error::Error;
};

// A NaN/Inf showed up where finite values are required, or training diverged.
struct NumericalError : Error {
    using Error::Error;
};

// A metric has no defined value for the given inputs (e.g. zero variance).
struct UndefinedMetricError : Error {
    using Error::Error;
};

// Malformed input file; message carries the offending line number.
struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace breg
